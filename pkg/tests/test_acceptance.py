"""Acceptance gate: one check per release criterion, at pinned tolerances.

Runs under pytest, or standalone (``python3 tests/test_acceptance.py``) to
print one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from vtcompress.clustering import cluster_aggregate, cluster_bundle, kmeans_pp, variant1_static, \
    variant2_dynamic, variant3_coarse
from vtcompress.cost_model import CostQuery, HardwareConfig, ModelConfig, estimate, sweep, sweep_csv
from vtcompress.pipeline import StrategySpec, compare_sequences, run_compare, run_layer_scan
from vtcompress.prng import SplitMix64
from vtcompress.saliency import SaliencyMap, compute_saliency
from vtcompress.sampling import spatial_sample
from vtcompress.sequence import retained_from, save_compressed
from vtcompress.token_store import LayerWeights, TokenBundle, save_bundle

from conftest import BLOB_SIZES_576, blob_points, make_bundle, make_layer
from test_clustering import brute_force_optimum, two_blob_points
from test_cost_model import H100, LLAMA7B, tally_oracle
from test_saliency import saliency_oracle


def random_saliency_bundle(rng: np.random.Generator, max_heads: int = 8) -> TokenBundle:
    rows = int(rng.integers(1, 9))
    cols = int(rng.integers(1, 9))  # N_v <= 64
    n_text = int(rng.integers(1, 17))
    n_heads = int(rng.integers(1, max_heads + 1))
    d_head = int(rng.integers(1, 9))
    dim = int(rng.integers(1, 25))
    return make_bundle(
        seed=int(rng.integers(0, 2**31)),
        grid_rows=rows,
        grid_cols=cols,
        n_text=n_text,
        dim=dim,
        heads=((n_heads, d_head),),
    )


def build_blob_bundle(n_layers: int = 2) -> TokenBundle:
    rng = np.random.default_rng(99)
    points, _ = blob_points(rng, BLOB_SIZES_576, 16)
    return TokenBundle(
        visual_embeddings=points,
        text_embeddings=rng.normal(size=(6, 16)),
        grid_rows=24,
        grid_cols=24,
        layers=tuple(make_layer(rng, 16, 2, 8) for _ in range(n_layers)),
        meta={"source": "acceptance"},
    )


def near_uniform_saliency(n: int) -> SaliencyMap:
    rng = np.random.default_rng(9)
    return SaliencyMap(0.5 + 1e-4 * rng.uniform(-1.0, 1.0, size=n), 0, True)


# --------------------------------------------------------------- criteria


def criterion_saliency_bounds(workdir: Path) -> None:
    """200 random bundles: scores in [1/N_t, 1]; uniform and H=1 cases exact
    to 1e-12; all within 10 s."""
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    for _ in range(200):
        bundle = random_saliency_bundle(rng)
        scores = compute_saliency(bundle, 0, scaled=True).scores
        lower = 1.0 / bundle.n_text
        assert np.all(scores >= lower - 1e-12), "score below 1/N_t"
        assert np.all(scores <= 1.0), "score above 1"

    uniform = TokenBundle(
        visual_embeddings=np.zeros((12, 4)),
        text_embeddings=np.zeros((7, 4)),
        grid_rows=3,
        grid_cols=4,
        layers=(LayerWeights(w_q=np.zeros((4, 8)), w_k=np.zeros((4, 8)), n_heads=2, d_head=4),),
    )
    scores = compute_saliency(uniform, 0, scaled=True).scores
    assert np.all(np.abs(scores - 1.0 / 7) <= 1e-12), "uniform case deviates from 1/N_t"

    single_head = make_bundle(seed=77, grid_rows=4, grid_cols=4, n_text=9, dim=6,
                              heads=((1, 6),))
    scores = compute_saliency(single_head, 0, scaled=True).scores
    assert np.all(np.abs(scores - 1.0 / 9) <= 1e-12), "H=1 case deviates from 1/N_t"

    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"bound suite took {elapsed:.1f}s (limit 10s)"


def criterion_saliency_oracle(workdir: Path) -> None:
    """Scores match the naive triple-loop recomputation to 1e-9 relative on
    50 random bundles."""
    rng = np.random.default_rng(4242)
    for i in range(50):
        rows = int(rng.integers(1, 4))
        cols = int(rng.integers(1, 5))
        bundle = make_bundle(
            seed=int(rng.integers(0, 2**31)),
            grid_rows=rows,
            grid_cols=cols,
            n_text=int(rng.integers(1, 6)),
            dim=int(rng.integers(1, 9)),
            heads=((int(rng.integers(1, 4)), int(rng.integers(1, 5))),),
        )
        scaled = bool(rng.integers(0, 2))
        expected = saliency_oracle(bundle, 0, scaled)
        got = compute_saliency(bundle, 0, scaled).scores
        np.testing.assert_allclose(got, expected, rtol=1e-9, err_msg=f"bundle {i}")


def criterion_kmeans_oracle(workdir: Path) -> None:
    """Small-instance objective never beats brute force; 10-sigma blobs are
    recovered in >= 99/100 seeded runs; Lloyd history non-increasing in every
    run."""

    def check_history(model) -> None:
        history = np.asarray(model.objective_history)
        assert np.all(
            np.diff(history) <= 1e-9 * np.maximum(1.0, history[:-1])
        ), "objective increased during Lloyd"

    rng = np.random.default_rng(7)
    for n, k in [(6, 2), (9, 2), (12, 2), (6, 3), (9, 3), (11, 3)]:
        points = rng.normal(size=(n, 2))
        best_obj, _ = brute_force_optimum(points, k)
        model = kmeans_pp(points, k, seed=int(rng.integers(0, 2**31)))
        check_history(model)
        assert model.objective >= best_obj - 1e-9 * max(1.0, best_obj), (
            f"objective {model.objective} beat brute force {best_obj} (n={n}, k={k})"
        )

    recovered = 0
    for seed in range(100):
        data_rng = np.random.default_rng(1000 + seed)
        points, truth = two_blob_points(data_rng)
        model = kmeans_pp(points, 2, seed=seed)
        check_history(model)
        if (model.labels == truth).all() or (model.labels == 1 - truth).all():
            recovered += 1
    assert recovered >= 99, f"blob partition recovered only {recovered}/100 times"


def criterion_cluster_aggregate_exact(workdir: Path) -> None:
    """k=64 over 576 tokens: exactly 64 outputs, each the member mean within
    1e-9; k=N is a bit-exact permutation of the input."""
    bundle = build_blob_bundle()
    model = cluster_bundle(bundle, 64, seed=12)
    seq = cluster_aggregate(bundle, model, seed=12)
    assert len(seq) == 64, f"expected 64 outputs, got {len(seq)}"
    for row, rec in zip(seq.embeddings, seq.provenance):
        members = np.asarray(rec.member_indices)
        expected = bundle.visual_embeddings[members].mean(axis=0)
        np.testing.assert_allclose(row, expected, rtol=1e-9, atol=1e-12)

    small = make_bundle(seed=20, grid_rows=3, grid_cols=4, n_text=2, dim=5)
    model = cluster_bundle(small, 12, seed=3)
    seq = cluster_aggregate(small, model, seed=3)
    sources = [rec.member_indices[0] for rec in seq.provenance]
    assert sorted(sources) == list(range(12)), "k=N is not a permutation"
    for row, src in zip(seq.embeddings, sources):
        assert np.array_equal(row, small.visual_embeddings[src]), "k=N row not bit-exact"


def criterion_retention_accounting(workdir: Path) -> None:
    """Variant 1 (k=20, x=11) lands in [60, 84] and exacts to 64; Variant 2
    (lambda=1) retains 5-7%; Variant 3 output = retained + k."""
    bundle = build_blob_bundle()
    model = cluster_bundle(bundle, 20, seed=7)
    smap = near_uniform_saliency(576)

    v1 = variant1_static(bundle, model, smap, 11.0)
    assert 60 <= len(v1) <= 84, f"variant1 retained {len(v1)}"
    v1_exact = variant1_static(bundle, model, smap, 11.0, retain_count=64)
    assert len(v1_exact) == 64, f"exact-count mode retained {len(v1_exact)}"

    v2 = variant2_dynamic(bundle, model, smap, 1.0)
    pct = 100.0 * len(v2) / 576
    assert 5.0 <= pct <= 7.0, f"variant2 retained {pct:.2f}%"

    v3 = variant3_coarse(bundle, model, smap, 11.0)
    assert len(v3) == v3.n_retained + model.k, (
        f"variant3 outputs {len(v3)} != retained {v3.n_retained} + k {model.k}"
    )
    assert v3.source_index_set() == set(range(576)), "variant3 lost or duplicated tokens"


def criterion_spatial_determinism(workdir: Path) -> None:
    """576 -> 64 selects the 8x8 lattice on rows/cols {1,4,...,22}; repeated
    runs serialize byte-identically."""
    bundle = build_blob_bundle()
    seq = spatial_sample(bundle, 64)
    axis = [1, 4, 7, 10, 13, 16, 19, 22]
    expected = [r * 24 + c for r in axis for c in axis]
    assert seq.retained_indices().tolist() == expected, "lattice mismatch"

    digests = []
    for name in ("first", "second"):
        out = workdir / f"spatial_{name}"
        save_compressed(spatial_sample(bundle, 64), out)
        digests.append(_tree_digest(out))
    assert digests[0] == digests[1], "repeated spatial runs differ on disk"


def criterion_random_statistics(workdir: Path) -> None:
    """Over 10,000 seeds (N=10, keep 3) every index is included with
    frequency 0.3 +/- 0.02."""
    counts = np.zeros(10)
    for seed in range(10_000):
        for idx in SplitMix64(seed).sample_without_replacement(10, 3):
            counts[idx] += 1
    freqs = counts / 10_000
    deviation = np.abs(freqs - 0.3)
    assert np.all(deviation <= 0.02), f"inclusion frequencies off: {freqs}"


def criterion_cost_model(workdir: Path) -> None:
    """Score-FLOPs ratio at 2T is exactly 4.0; 20-point sweep monotone;
    LLaMA2-7B-like totals match the tally oracle to 1e-9; r=0.1 sweep emits
    well-formed CSV."""
    model = ModelConfig(n_layers=2, d_model=32, n_heads=2, d_head=16, d_ff=64,
                        ffn_style="gated", vocab_size=100)
    half = estimate(model, H100, CostQuery(0, 100, 0.5))
    full = estimate(model, H100, CostQuery(0, 100, 1.0))
    assert full.attn_score_flops / half.attn_score_flops == 4.0, "quadratic ratio not exact"

    base = CostQuery(n_text_tokens=64, n_visual_tokens_full=576, retention_fraction=1.0)
    reports = sweep(LLAMA7B, H100, base, [(i + 1) / 20 for i in range(20)])
    for field in ("prefill_flops", "kv_cache_bytes", "activation_bytes_peak",
                  "prefill_time_s", "weight_bytes"):
        values = [getattr(rep, field) for rep in reports]
        assert all(b >= a for a, b in zip(values, values[1:])), f"{field} not monotone"

    report = estimate(LLAMA7B, H100, CostQuery(64, 576, 0.1))
    expected = tally_oracle(LLAMA7B, report.total_tokens)
    for key, value in expected.items():
        got = getattr(report, key)
        assert abs(got - value) <= 1e-9 * max(1, abs(value)), f"{key}: {got} != {value}"

    csv_text = sweep_csv(sweep(LLAMA7B, H100, base, [0.1]))
    lines = csv_text.strip().split("\n")
    assert len(lines) == 2 and lines[0].startswith("r,"), "CSV malformed"
    assert len(lines[1].split(",")) == len(lines[0].split(",")), "CSV row width mismatch"


def _tree_digest(root: Path) -> dict[str, str]:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


def _cli(*args: str) -> subprocess.CompletedProcess:
    proc = subprocess.run(
        [sys.executable, "-m", "vtcompress", *args], capture_output=True, text=True
    )
    assert proc.returncode == 0, f"vtc {' '.join(args)} failed: {proc.stderr}"
    return proc


def criterion_cli_determinism(workdir: Path) -> None:
    """Every subcommand, run twice with identical inputs and seeds, produces
    byte-identical output trees."""
    bundle_path = workdir / "bundle"
    save_bundle(build_blob_bundle(), bundle_path)
    model_json = workdir / "model.json"
    model_json.write_text(json.dumps({
        "n_layers": 4, "d_model": 64, "n_heads": 4, "d_head": 16, "d_ff": 256,
        "ffn_style": "gated", "vocab_size": 1000,
    }))
    hw_json = workdir / "hw.json"
    hw_json.write_text(json.dumps({"peak_flops": 1e12, "mem_bandwidth": 1e11}))

    spec = json.dumps({"name": "basic-saliency", "retain_count": 64})
    invocations = {
        "compress-aggregate": ("compress", str(bundle_path), "--strategy",
                               "cluster-aggregate", "--k", "64", "--seed", "7"),
        "compress-coarse": ("compress", str(bundle_path), "--strategy", "cluster-coarse",
                            "--x-percent", "11", "--k", "20", "--seed", "7"),
        "compress-random": ("compress", str(bundle_path), "--strategy", "random",
                            "--retain-count", "64", "--seed", "3"),
        "saliency": ("saliency", str(bundle_path), "--format", "pgm"),
        "compare": ("compare", str(bundle_path), "--spec-a", spec, "--spec-b", spec),
        "layer-scan": ("layer-scan", str(bundle_path), "--layers", "0,1"),
        "cost": ("cost", "--model", str(model_json), "--hw", str(hw_json),
                 "--n-text", "64", "--n-visual", "576", "--r-grid", "20"),
    }
    for label, args in invocations.items():
        digests = []
        for attempt in ("a", "b"):
            out = workdir / f"{label}_{attempt}"
            _cli(*args, "--out", str(out))
            digests.append(_tree_digest(out))
        assert digests[0], f"{label} produced no files"
        assert digests[0] == digests[1], f"{label} runs differ on disk"

    # validate writes nothing; its stdout must still be reproducible
    first = _cli("validate", str(bundle_path)).stdout
    second = _cli("validate", str(bundle_path)).stdout
    assert first == second, "validate output differs between runs"


def criterion_trend_instrumentation(workdir: Path) -> None:
    """compare: Jaccard 1.0 for identical specs, 0.0 for disjoint hand-built
    selections; layer-scan on duplicated weights correlates at 1.0."""
    bundle_path = workdir / "trend_bundle"
    save_bundle(build_blob_bundle(), bundle_path)
    spec = StrategySpec(name="basic-saliency", retain_count=64)
    report = run_compare(bundle_path, spec, spec)
    assert report["jaccard"] == 1.0, f"identical specs gave Jaccard {report['jaccard']}"

    rng = np.random.default_rng(5)
    source = rng.normal(size=(10, 4))
    left = retained_from(source, np.arange(0, 5), {})
    right = retained_from(source, np.arange(5, 10), {})
    overlap = compare_sequences(left, right)
    assert overlap["jaccard"] == 0.0, f"disjoint selections gave {overlap['jaccard']}"

    dup_rng = np.random.default_rng(6)
    layer = make_layer(dup_rng, 8, 2, 4)
    dup = TokenBundle(
        visual_embeddings=dup_rng.normal(size=(16, 8)),
        text_embeddings=dup_rng.normal(size=(4, 8)),
        grid_rows=4,
        grid_cols=4,
        layers=(layer, layer),
    )
    dup_path = workdir / "dup_bundle"
    save_bundle(dup, dup_path)
    _, matrix = run_layer_scan(dup_path, [0, 1], out_dir=workdir / "dup_scan")
    assert matrix[0][1] == 1.0 and matrix[1][0] == 1.0, "duplicated layers not correlated"


CRITERIA = [
    ("saliency bound suite", criterion_saliency_bounds),
    ("saliency oracle", criterion_saliency_oracle),
    ("k-means oracle", criterion_kmeans_oracle),
    ("cluster & aggregate exactness", criterion_cluster_aggregate_exact),
    ("retention accounting", criterion_retention_accounting),
    ("spatial sampling determinism", criterion_spatial_determinism),
    ("random sampling statistics", criterion_random_statistics),
    ("cost model", criterion_cost_model),
    ("CLI determinism", criterion_cli_determinism),
    ("trend instrumentation", criterion_trend_instrumentation),
]


def test_acceptance_saliency_bounds(tmp_path):
    criterion_saliency_bounds(tmp_path)


def test_acceptance_saliency_oracle(tmp_path):
    criterion_saliency_oracle(tmp_path)


def test_acceptance_kmeans_oracle(tmp_path):
    criterion_kmeans_oracle(tmp_path)


def test_acceptance_cluster_aggregate_exact(tmp_path):
    criterion_cluster_aggregate_exact(tmp_path)


def test_acceptance_retention_accounting(tmp_path):
    criterion_retention_accounting(tmp_path)


def test_acceptance_spatial_determinism(tmp_path):
    criterion_spatial_determinism(tmp_path)


def test_acceptance_random_statistics(tmp_path):
    criterion_random_statistics(tmp_path)


def test_acceptance_cost_model(tmp_path):
    criterion_cost_model(tmp_path)


def test_acceptance_cli_determinism(tmp_path):
    criterion_cli_determinism(tmp_path)


def test_acceptance_trend_instrumentation(tmp_path):
    criterion_trend_instrumentation(tmp_path)


def main() -> int:
    failures = 0
    with tempfile.TemporaryDirectory() as tmp:
        for label, func in CRITERIA:
            workdir = Path(tmp) / label.replace(" ", "_").replace("&", "and")
            workdir.mkdir(parents=True, exist_ok=True)
            try:
                func(workdir)
            except Exception as exc:  # report and continue
                failures += 1
                print(f"FAIL {label}: {exc}")
            else:
                print(f"PASS {label}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
