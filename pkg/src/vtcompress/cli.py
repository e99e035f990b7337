"""Command-line front end.

Subcommands: compress, saliency, compare, layer-scan, cost, validate.
Exit codes: 0 success, 2 validation error, 3 I/O error, 4 incomparable
comparison. Runs are pure functions of (bundle bytes, flags, seeds); timing
is printed but never written to output files.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from ._common import round_half_up
from ._version import VERSION
from .cost_model import (
    CostQuery,
    hardware_config_from_json,
    model_config_from_json,
    sweep,
    sweep_csv,
)
from .pipeline import (
    IncomparableStrategiesError,
    SpecError,
    StrategySpec,
    write_run_record,
    run_compare,
    run_compress,
    run_layer_scan,
)
from .saliency import DEGENERATE_SINGLE_HEAD_NOTE, compute_saliency, export_heatmap
from .token_store import BundleFormatError, BundleIOError, load_bundle


def _warn(msg: str) -> None:
    print(f"vtc: warning: {msg}", file=sys.stderr)


def _spec_from_args(args: argparse.Namespace, retain_count: int | None) -> StrategySpec:
    fields = {
        "k": args.k,
        "x_percent": args.x_percent,
        "lam": args.lam,
        "retain_count": retain_count,
        "seed": args.seed,
        "basis": args.basis,
        "metric": args.metric,
        "layer_index": args.layer_index,
        "order_policy": args.order_policy,
        "scaled": args.scaled,
        "softmax_dim": args.softmax_dim,
    }
    return StrategySpec(name=args.strategy, **{k: v for k, v in fields.items() if v is not None})


def _resolve_retention(args: argparse.Namespace, n_visual: int) -> int | None:
    count = args.retain_count
    if args.retain_frac is not None:
        if not 0.0 < args.retain_frac <= 1.0:
            raise SpecError(f"--retain-frac must be in (0, 1], got {args.retain_frac}")
        frac_count = max(1, round_half_up(args.retain_frac * n_visual))
        if count is not None:
            _warn(
                f"both --retain-count and --retain-frac given; --retain-count={count} wins"
            )
        else:
            count = frac_count
    return count


def _cmd_compress(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    retain_count = _resolve_retention(args, bundle.n_visual)
    spec = _spec_from_args(args, retain_count)
    start = time.monotonic()
    summary = run_compress(args.bundle, spec, args.out)
    elapsed = time.monotonic() - start
    for note in summary["warnings"]:
        _warn(note)
    resolved = summary["strategy"]
    shown = " ".join(f"{k}={v}" for k, v in resolved.items() if k != "name")
    print(f"strategy: {resolved['name']} {shown}")
    print(
        f"tokens: {summary['n_input']} -> {summary['n_output']} "
        f"({summary['retained_pct']:.1f}%), retained={summary['n_retained']} "
        f"aggregated={summary['n_aggregated']}"
    )
    print(f"elapsed: {elapsed:.3f}s")
    print(f"wrote: {summary['out']}")
    return 0


def _cmd_saliency(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    if 0 <= args.layer_index < len(bundle.layers) and bundle.layers[args.layer_index].n_heads == 1:
        _warn(DEGENERATE_SINGLE_HEAD_NOTE)
    smap = compute_saliency(bundle, args.layer_index, args.scaled, args.softmax_dim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"heatmap.{args.format}"
    export_heatmap(smap, (bundle.grid_rows, bundle.grid_cols), target, args.format)
    write_run_record(out, "saliency", {
        "bundle": str(args.bundle),
        "layer_index": args.layer_index,
        "scaled": args.scaled,
        "softmax_dim": args.softmax_dim,
        "format": args.format,
    })
    print(
        f"saliency: layer={args.layer_index} n={len(smap)} "
        f"min={smap.scores.min():.6g} max={smap.scores.max():.6g}"
    )
    print(f"wrote: {target}")
    return 0


def _parse_spec_json(text: str, flag: str) -> StrategySpec:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{flag}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise SpecError(f"{flag}: expected a JSON object")
    return StrategySpec.from_dict(raw)


def _cmd_compare(args: argparse.Namespace) -> int:
    spec_a = _parse_spec_json(args.spec_a, "--spec-a")
    spec_b = _parse_spec_json(args.spec_b, "--spec-b")
    report = run_compare(args.bundle, spec_a, spec_b, bundle_path_b=args.bundle_b)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text + "\n", encoding="utf-8")
        write_run_record(out, "compare", {
            "bundle": str(args.bundle),
            "bundle_b": str(args.bundle_b) if args.bundle_b else str(args.bundle),
            "spec_a": spec_a.resolved(),
            "spec_b": spec_b.resolved(),
        })
    return 0


def _cmd_layer_scan(args: argparse.Namespace) -> int:
    layers = None
    if args.layers:
        layers = [int(part) for part in args.layers.split(",") if part.strip() != ""]
    scanned, matrix = run_layer_scan(
        args.bundle, layers, out_dir=args.out, fmt=args.format, scaled=args.scaled
    )
    print(f"layers scanned: {scanned}")
    for layer, row in zip(scanned, matrix):
        cells = " ".join("undef" if v is None else f"{v:+.3f}" for v in row)
        print(f"  layer {layer}: {cells}")
    print(f"wrote: {args.out}")
    return 0


def _cmd_cost(args: argparse.Namespace) -> int:
    model = model_config_from_json(args.model)
    hw = hardware_config_from_json(args.hw)
    if args.r_grid is not None:
        if args.r_grid < 1:
            raise SpecError("--r-grid must be >= 1")
        r_values = [(i + 1) / args.r_grid for i in range(args.r_grid)]
    else:
        r_values = [float(part) for part in args.r.split(",") if part.strip() != ""]
        if not r_values:
            raise SpecError("--r needs at least one value")
    base = CostQuery(
        n_text_tokens=args.n_text,
        n_visual_tokens_full=args.n_visual,
        retention_fraction=1.0,
    )
    reports = sweep(model, hw, base, r_values, alpha=args.alpha)
    csv_text = sweep_csv(reports)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(csv_text, encoding="utf-8")
        write_run_record(out, "cost", {
            "model": str(args.model),
            "hw": str(args.hw),
            "n_text": args.n_text,
            "n_visual": args.n_visual,
            "r_values": r_values,
            "alpha": args.alpha,
        })
        print(f"wrote: {out / 'sweep.csv'}")
    else:
        sys.stdout.write(csv_text)
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    keys = "yes" if bundle.visual_keys is not None else "no"
    print(
        f"OK n_visual={bundle.n_visual} n_text={bundle.n_text} dim={bundle.dim} "
        f"grid={bundle.grid_rows}x{bundle.grid_cols} layers={len(bundle.layers)} "
        f"visual_keys={keys}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtc",
        description="Visual token sequence compression, saliency analysis, and prefill cost estimates.",
    )
    parser.add_argument("--version", action="version", version=f"vtc {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_saliency_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--layer-index", type=int, default=None)
        p.add_argument("--scaled", action=argparse.BooleanOptionalAction, default=None,
                       help="apply 1/sqrt(d_head) scaling (default on)")
        p.add_argument("--softmax-dim", choices=("text", "visual"), default=None)

    p = sub.add_parser("compress", help="run a compression strategy on a bundle")
    p.add_argument("bundle")
    p.add_argument("--strategy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--retain-count", type=int, default=None)
    p.add_argument("--retain-frac", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--x-percent", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--basis", choices=("embeddings", "keys"), default=None)
    p.add_argument("--metric", choices=("euclidean", "cosine"), default=None)
    p.add_argument("--order-policy", choices=("random", "mean_position"), default=None)
    add_saliency_flags(p)
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("saliency", help="export a saliency heatmap")
    p.add_argument("bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("pgm", "csv"), default="pgm")
    p.add_argument("--layer-index", type=int, default=0)
    p.add_argument("--scaled", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--softmax-dim", choices=("text", "visual"), default="text")
    p.set_defaults(func=_cmd_saliency)

    p = sub.add_parser("compare", help="overlap report between two strategy runs")
    p.add_argument("bundle")
    p.add_argument("--spec-a", required=True, help="strategy spec as JSON")
    p.add_argument("--spec-b", required=True, help="strategy spec as JSON")
    p.add_argument("--bundle-b", default=None,
                   help="second bundle (e.g. same image, different prompt)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("layer-scan", help="per-layer heatmaps + rank-correlation matrix")
    p.add_argument("bundle")
    p.add_argument("--layers", default=None, help="comma-separated layer indices (default all)")
    p.add_argument("--format", choices=("pgm", "csv"), default="pgm")
    p.add_argument("--scaled", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_layer_scan)

    p = sub.add_parser("cost", help="prefill cost sweep over retention fractions")
    p.add_argument("--model", required=True, help="model config JSON")
    p.add_argument("--hw", required=True, help="hardware config JSON")
    p.add_argument("--n-text", type=int, required=True)
    p.add_argument("--n-visual", type=int, required=True)
    p.add_argument("--r", default="1.0", help="comma-separated retention fractions")
    p.add_argument("--r-grid", type=int, default=None,
                   help="sweep N evenly spaced fractions ending at 1.0")
    p.add_argument("--alpha", type=int, default=12)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("validate", help="check a bundle directory")
    p.add_argument("bundle")
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IncomparableStrategiesError as exc:
        print(f"vtc: incomparable: {exc}", file=sys.stderr)
        return 4
    except (BundleFormatError, SpecError, ValueError) as exc:
        print(f"vtc: error: {exc}", file=sys.stderr)
        return 2
    except (BundleIOError, OSError) as exc:
        print(f"vtc: io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
