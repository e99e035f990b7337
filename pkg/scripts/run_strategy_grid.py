#!/usr/bin/env python3
"""Run every compression strategy on one bundle and tabulate the results.

    python3 scripts/run_strategy_grid.py path/to/bundle --retain 64 --seed 7
"""

from __future__ import annotations

import argparse

from vtcompress.pipeline import StrategySpec, execute_strategy
from vtcompress.token_store import load_bundle


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("bundle")
    parser.add_argument("--retain", type=int, default=64, help="target token budget")
    parser.add_argument("--k", type=int, default=20)
    parser.add_argument("--x-percent", type=float, default=11.0)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    bundle = load_bundle(args.bundle)
    specs = [
        StrategySpec(name="basic-saliency", retain_count=args.retain),
        StrategySpec(name="cluster-saliency", x_percent=args.x_percent, k=args.k,
                     seed=args.seed, retain_count=args.retain),
        StrategySpec(name="cluster-dynamic", lam=1.0, k=args.k, seed=args.seed),
        StrategySpec(name="cluster-coarse", x_percent=args.x_percent, k=args.k, seed=args.seed),
        StrategySpec(name="cluster-aggregate", k=args.retain, seed=args.seed),
        StrategySpec(name="random", retain_count=args.retain, seed=args.seed),
        StrategySpec(name="spatial", retain_count=args.retain),
    ]

    print(f"bundle: {bundle.n_visual} visual tokens "
          f"({bundle.grid_rows}x{bundle.grid_cols}), {bundle.n_text} text tokens")
    print(f"{'strategy':<18} {'out':>5} {'kept%':>6} {'retained':>8} {'aggregated':>10}")
    for spec in specs:
        result = execute_strategy(bundle, spec)
        seq = result.sequence
        pct = 100.0 * len(seq) / bundle.n_visual
        print(f"{spec.name:<18} {len(seq):>5} {pct:>6.1f} "
              f"{seq.n_retained:>8} {seq.n_aggregated:>10}")
        for note in result.warnings:
            print(f"    note: {note}")


if __name__ == "__main__":
    main()
