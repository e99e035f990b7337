#!/usr/bin/env python3
"""Write prefill cost reduction curves (CSV) for a model/hardware pair.

    python3 scripts/cost_curves.py --model configs/llama2_7b.json \
        --hw configs/h100.json --out out/costs
"""

from __future__ import annotations

import argparse
from pathlib import Path

from vtcompress.cost_model import (
    CostQuery,
    hardware_config_from_json,
    model_config_from_json,
    sweep,
    sweep_csv,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", required=True)
    parser.add_argument("--hw", required=True)
    parser.add_argument("--n-text", type=int, default=64)
    parser.add_argument("--n-visual", type=int, default=576)
    parser.add_argument("--points", type=int, default=20)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    model = model_config_from_json(args.model)
    hw = hardware_config_from_json(args.hw)
    base = CostQuery(n_text_tokens=args.n_text, n_visual_tokens_full=args.n_visual,
                     retention_fraction=1.0)
    r_values = [(i + 1) / args.points for i in range(args.points)]
    reports = sweep(model, hw, base, r_values)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "cost_curves.csv"
    target.write_text(sweep_csv(reports), encoding="utf-8")

    lowest = reports[0]
    print(f"wrote {target}")
    print(f"at r={lowest.retention_fraction:.2f}: "
          f"flops x{lowest.ratios['prefill_flops']:.3f}, "
          f"kv x{lowest.ratios['kv_cache_bytes']:.3f}, "
          f"act x{lowest.ratios['activation_bytes_peak']:.3f}, "
          f"time x{lowest.ratios['prefill_time_s']:.3f}")


if __name__ == "__main__":
    main()
