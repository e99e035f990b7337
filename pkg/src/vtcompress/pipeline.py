"""Strategy orchestration: spec validation, execution, comparison, layer scans.

Every run writes a ``run.json`` with the fully resolved strategy, library
version, and seeds, so the exact invocation can be replayed. Outputs are
pure functions of (bundle bytes, flags, seed): no timestamps or wall-clock
values are written to disk.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._version import VERSION
from .clustering import (
    ClusterModel,
    cluster_aggregate,
    cluster_bundle,
    variant1_static,
    variant2_dynamic,
    variant3_coarse,
)
from .prng import ALGORITHM_ID
from .saliency import (
    DEGENERATE_SINGLE_HEAD_NOTE,
    SaliencyMap,
    basic_saliency_select,
    compute_saliency,
    export_heatmap,
    rank_correlation,
)
from .sampling import random_sample, spatial_sample
from .sequence import CompressedSequence, retained_from, save_compressed
from .token_store import TokenBundle, load_bundle

RUN_NAME = "run.json"

STRATEGY_NAMES = (
    "basic-saliency",
    "cluster-saliency",
    "cluster-dynamic",
    "cluster-coarse",
    "cluster-aggregate",
    "random",
    "spatial",
)
SALIENCY_STRATEGIES = frozenset({"basic-saliency", "cluster-saliency", "cluster-dynamic",
                                 "cluster-coarse"})
CLUSTER_STRATEGIES = frozenset({"cluster-saliency", "cluster-dynamic", "cluster-coarse",
                                "cluster-aggregate"})
# strategies whose output is a pure index selection, comparable by Jaccard
INDEX_STRATEGIES = frozenset({"basic-saliency", "cluster-saliency", "cluster-dynamic",
                              "random", "spatial"})
AGGREGATION_STRATEGIES = frozenset({"cluster-aggregate", "cluster-coarse"})

_PARAM_TABLE: dict[str, tuple[frozenset[str], frozenset[str]]] = {
    # name -> (required, optional)
    "basic-saliency": (
        frozenset({"retain_count"}),
        frozenset({"layer_index", "scaled", "softmax_dim"}),
    ),
    "cluster-saliency": (
        frozenset({"x_percent"}),
        frozenset({"k", "seed", "retain_count", "basis", "metric", "layer_index", "scaled",
                   "softmax_dim"}),
    ),
    "cluster-dynamic": (
        frozenset({"lam"}),
        frozenset({"k", "seed", "retain_count", "basis", "metric", "layer_index", "scaled",
                   "softmax_dim"}),
    ),
    "cluster-coarse": (
        frozenset({"x_percent"}),
        frozenset({"k", "seed", "basis", "metric", "layer_index", "scaled", "softmax_dim"}),
    ),
    "cluster-aggregate": (
        frozenset({"k"}),
        frozenset({"seed", "order_policy", "basis", "metric"}),
    ),
    "random": (frozenset({"retain_count"}), frozenset({"seed"})),
    "spatial": (frozenset({"retain_count"}), frozenset()),
}

_DEFAULTS = {
    "k": 20,
    "seed": 0,
    "basis": "embeddings",
    "metric": "euclidean",
    "layer_index": 0,
    "order_policy": "random",
    "scaled": True,
    "softmax_dim": "text",
}

_SPEC_FIELDS = ("k", "x_percent", "lam", "retain_count", "seed", "basis", "metric",
                "layer_index", "order_policy", "scaled", "softmax_dim")


class SpecError(ValueError):
    """Strategy name/parameter combination is invalid."""


class IncomparableStrategiesError(Exception):
    """The two strategies have no common comparison basis."""


@dataclass(frozen=True)
class StrategySpec:
    """A named compression strategy plus exactly the parameters it needs."""

    name: str
    k: int | None = None
    x_percent: float | None = None
    lam: float | None = None
    retain_count: int | None = None
    seed: int | None = None
    basis: str | None = None
    metric: str | None = None
    layer_index: int | None = None
    order_policy: str | None = None
    scaled: bool | None = None
    softmax_dim: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "StrategySpec":
        data = dict(raw)
        name = data.pop("name", None)
        if name is None:
            raise SpecError("strategy spec needs a 'name' key")
        if "lambda" in data:  # JSON-friendly alias
            data["lam"] = data.pop("lambda")
        unknown = set(data) - set(_SPEC_FIELDS)
        if unknown:
            raise SpecError(f"unknown strategy parameters: {sorted(unknown)}")
        return cls(name=name, **data)

    def resolved(self) -> dict:
        """Validate against the strategy's parameter table; apply defaults.

        Returns a plain dict (name + every applicable parameter) suitable for
        run.json and for execution.
        """
        if self.name not in _PARAM_TABLE:
            raise SpecError(
                f"unknown strategy {self.name!r}; expected one of {STRATEGY_NAMES}"
            )
        required, optional = _PARAM_TABLE[self.name]
        allowed = required | optional
        given = {f: getattr(self, f) for f in _SPEC_FIELDS if getattr(self, f) is not None}
        missing = sorted(required - set(given))
        if missing:
            raise SpecError(f"strategy {self.name!r} requires parameters: {missing}")
        extra = sorted(set(given) - allowed)
        if extra:
            raise SpecError(f"strategy {self.name!r} does not accept parameters: {extra}")
        out: dict = {"name": self.name}
        for field_name in _SPEC_FIELDS:
            if field_name in given:
                out[field_name] = given[field_name]
            elif field_name in optional and field_name in _DEFAULTS:
                out[field_name] = _DEFAULTS[field_name]
        return out


@dataclass(frozen=True)
class StrategyResult:
    sequence: CompressedSequence
    saliency: SaliencyMap | None
    cluster_model: ClusterModel | None
    warnings: tuple[str, ...]


def execute_strategy(bundle: TokenBundle, spec: StrategySpec) -> StrategyResult:
    """Run one strategy on an in-memory bundle."""
    p = spec.resolved()
    name = p["name"]
    warnings: list[str] = []

    smap = None
    if name in SALIENCY_STRATEGIES:
        layer_index = p["layer_index"]
        if not 0 <= layer_index < len(bundle.layers):
            raise SpecError(
                f"layer_index {layer_index} out of range; bundle has {len(bundle.layers)} layers"
            )
        if bundle.layers[layer_index].n_heads == 1:
            warnings.append(DEGENERATE_SINGLE_HEAD_NOTE)
        smap = compute_saliency(bundle, layer_index, p["scaled"], p["softmax_dim"])

    model = None
    if name in CLUSTER_STRATEGIES:
        model = cluster_bundle(bundle, p["k"], p["seed"], basis=p["basis"], metric=p["metric"])

    if name == "basic-saliency":
        indices = basic_saliency_select(smap, p["retain_count"])
        meta = {"strategy": "basic-saliency", "retain_count": p["retain_count"],
                "layer_index": p["layer_index"]}
        seq = retained_from(bundle.visual_embeddings, indices, meta)
    elif name == "cluster-saliency":
        seq = variant1_static(bundle, model, smap, p["x_percent"],
                              retain_count=p.get("retain_count"))
    elif name == "cluster-dynamic":
        seq = variant2_dynamic(bundle, model, smap, p["lam"],
                               retain_count=p.get("retain_count"))
    elif name == "cluster-coarse":
        seq = variant3_coarse(bundle, model, smap, p["x_percent"])
    elif name == "cluster-aggregate":
        seq = cluster_aggregate(bundle, model, p["seed"], order_policy=p["order_policy"])
    elif name == "random":
        seq = random_sample(bundle, p["retain_count"], p["seed"])
    else:  # spatial
        seq = spatial_sample(bundle, p["retain_count"])
        if len(seq) != p["retain_count"]:
            warnings.append(
                f"spatial lattice achieves {len(seq)} tokens for requested "
                f"{p['retain_count']}"
            )
    return StrategyResult(sequence=seq, saliency=smap, cluster_model=model,
                          warnings=tuple(warnings))


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_run_record(out_dir: Path, command: str, payload: dict) -> None:
    record = {"library": "vtcompress", "version": VERSION, "command": command,
              "rng": ALGORITHM_ID}
    record.update(payload)
    _write_json(out_dir / RUN_NAME, record)


def run_compress(bundle_path, spec: StrategySpec, out_path) -> dict:
    """Execute a strategy on a stored bundle and write the compressed output."""
    resolved = spec.resolved()
    bundle = load_bundle(bundle_path)
    result = execute_strategy(bundle, spec)
    seq = result.sequence

    out_dir = Path(out_path)
    save_compressed(seq, out_dir)
    write_run_record(out_dir, "compress", {"bundle": str(bundle_path), "spec": resolved})

    return {
        "strategy": resolved,
        "n_input": bundle.n_visual,
        "n_output": len(seq),
        "n_retained": seq.n_retained,
        "n_aggregated": seq.n_aggregated,
        "retained_pct": 100.0 * len(seq) / bundle.n_visual,
        "out": str(out_dir),
        "warnings": list(result.warnings),
    }


def jaccard_index(a: set, b: set) -> float:
    """|A ∩ B| / |A ∪ B|; two empty sets count as identical."""
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two labelings of the same items."""
    la = np.asarray(labels_a, dtype=np.int64)
    lb = np.asarray(labels_b, dtype=np.int64)
    if la.shape != lb.shape or la.ndim != 1 or la.size == 0:
        raise ValueError("labelings must be equal-length non-empty vectors")
    n = la.size
    pair_sum = 0
    for a_val in np.unique(la):
        mask = la == a_val
        for count in np.bincount(lb[mask]):
            pair_sum += math.comb(int(count), 2)
    a_pairs = sum(math.comb(int(c), 2) for c in np.bincount(la))
    b_pairs = sum(math.comb(int(c), 2) for c in np.bincount(lb))
    total = math.comb(n, 2)
    expected = a_pairs * b_pairs / total if total else 0.0
    max_index = 0.5 * (a_pairs + b_pairs)
    if max_index == expected:
        return 1.0
    return (pair_sum - expected) / (max_index - expected)


def compare_sequences(seq_a: CompressedSequence, seq_b: CompressedSequence) -> dict:
    """Jaccard overlap of two pure index selections."""
    set_a = {int(i) for i in seq_a.retained_indices()}
    set_b = {int(i) for i in seq_b.retained_indices()}
    return {
        "jaccard": jaccard_index(set_a, set_b),
        "retained_a": len(set_a),
        "retained_b": len(set_b),
        "intersection": len(set_a & set_b),
        "union": len(set_a | set_b),
    }


def run_compare(
    bundle_path,
    spec_a: StrategySpec,
    spec_b: StrategySpec,
    bundle_path_b=None,
) -> dict:
    """Overlap report between two strategy runs.

    Index-selecting strategies compare by Jaccard overlap of retained sets
    (plus Spearman correlation of the saliency maps when both are
    saliency-based); aggregation strategies compare by adjusted Rand index of
    their cluster labelings. Mixing the two families is an error.
    """
    resolved_a = spec_a.resolved()
    resolved_b = spec_b.resolved()
    name_a, name_b = resolved_a["name"], resolved_b["name"]

    in_index = name_a in INDEX_STRATEGIES and name_b in INDEX_STRATEGIES
    in_agg = name_a in AGGREGATION_STRATEGIES and name_b in AGGREGATION_STRATEGIES
    if not in_index and not in_agg:
        raise IncomparableStrategiesError(
            f"cannot compare {name_a!r} with {name_b!r}: one selects indices, "
            "the other aggregates clusters"
        )

    bundle_a = load_bundle(bundle_path)
    bundle_b = bundle_a if bundle_path_b is None else load_bundle(bundle_path_b)
    if bundle_a.n_visual != bundle_b.n_visual:
        raise SpecError(
            f"bundles disagree on visual token count ({bundle_a.n_visual} vs "
            f"{bundle_b.n_visual}); retained sets are not comparable"
        )

    result_a = execute_strategy(bundle_a, spec_a)
    result_b = execute_strategy(bundle_b, spec_b)

    report: dict = {
        "strategy_a": resolved_a,
        "strategy_b": resolved_b,
        "bundle_a": str(bundle_path),
        "bundle_b": str(bundle_path if bundle_path_b is None else bundle_path_b),
    }
    if in_index:
        report["mode"] = "retained-indices"
        report.update(compare_sequences(result_a.sequence, result_b.sequence))
        if result_a.saliency is not None and result_b.saliency is not None:
            rho = rank_correlation(result_a.saliency, result_b.saliency)
            report["spearman"] = "undefined" if rho is None else rho
    else:
        report["mode"] = "cluster-labels"
        report["ari"] = adjusted_rand_index(
            result_a.cluster_model.labels, result_b.cluster_model.labels
        )
    return report


def run_layer_scan(
    bundle_path,
    layers: list[int] | None = None,
    out_dir=None,
    fmt: str = "pgm",
    scaled: bool = True,
) -> tuple[list[int], list[list[float | None]]]:
    """Per-layer saliency heatmaps plus the pairwise Spearman matrix.

    The diagonal is 1.0 by convention; off-diagonal cells are Spearman
    correlations, or None when a ranking is constant. Maps for layers beyond
    the first reuse the stored embeddings with that layer's weights.
    """
    bundle = load_bundle(bundle_path)
    if layers is None:
        layers = list(range(len(bundle.layers)))
    if not layers:
        raise SpecError("no layers requested")
    for layer in layers:
        if not 0 <= layer < len(bundle.layers):
            raise SpecError(
                f"layer {layer} not in bundle (has {len(bundle.layers)} layers)"
            )

    maps = [compute_saliency(bundle, layer, scaled) for layer in layers]
    size = len(layers)
    matrix: list[list[float | None]] = [[None] * size for _ in range(size)]
    for i in range(size):
        matrix[i][i] = 1.0
        for j in range(i + 1, size):
            rho = rank_correlation(maps[i], maps[j])
            matrix[i][j] = rho
            matrix[j][i] = rho

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for layer, smap in zip(layers, maps):
            export_heatmap(smap, (bundle.grid_rows, bundle.grid_cols),
                           out / f"layer_{layer:02d}.{fmt}", fmt)
        lines = ["layer," + ",".join(str(l) for l in layers)]
        for i, layer in enumerate(layers):
            cells = ["undefined" if v is None else f"{float(v)!r}" for v in matrix[i]]
            lines.append(f"{layer}," + ",".join(cells))
        (out / "spearman.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        write_run_record(out, "layer-scan", {
            "bundle": str(bundle_path),
            "layers": list(layers),
            "scaled": scaled,
            "format": fmt,
            "note": "maps reuse stored embeddings with each layer's projection weights",
        })
    return list(layers), matrix
