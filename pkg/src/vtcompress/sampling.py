"""Importance-agnostic baselines: uniform random and spatial-lattice sampling."""

from __future__ import annotations

import math

import numpy as np

from ._common import round_half_up
from .prng import ALGORITHM_ID, SplitMix64
from .sequence import CompressedSequence, Retained
from .token_store import TokenBundle


def _check_count(n_visual: int, retain_count: int) -> None:
    if not 1 <= retain_count <= n_visual:
        raise ValueError(f"retain_count must be in [1, {n_visual}], got {retain_count}")


def random_sample(bundle: TokenBundle, retain_count: int, seed: int) -> CompressedSequence:
    """Uniform sample without replacement, emitted in ascending index order.

    The selected index set depends only on (n_visual, retain_count, seed),
    never on the embedding values.
    """
    _check_count(bundle.n_visual, retain_count)
    idx = SplitMix64(seed).sample_without_replacement(bundle.n_visual, retain_count)
    indices = np.asarray(idx, dtype=np.int64)
    return CompressedSequence(
        embeddings=bundle.visual_embeddings[indices].copy(),
        provenance=tuple(Retained(int(i)) for i in indices),
        order_policy="original",
        meta={"strategy": "random", "seed": seed, "rng": ALGORITHM_ID},
    )


def choose_lattice(grid_rows: int, grid_cols: int, retain_count: int) -> tuple[int, int]:
    """Pick lattice dims (r, c) for a target count on an R x C grid.

    Anchor r at round(sqrt(count * R / C)) to match the grid aspect, then
    search r-1..r+1 with c = round(count / r), keeping the pair whose product
    lands closest to the target (ties prefer more rows).
    """
    if not 1 <= retain_count <= grid_rows * grid_cols:
        raise ValueError(
            f"retain_count must be in [1, {grid_rows * grid_cols}], got {retain_count}"
        )
    anchor = round_half_up(math.sqrt(retain_count * grid_rows / grid_cols))
    best: tuple[int, int, int] | None = None  # (|rc - target|, -r, c)
    for r in (anchor - 1, anchor, anchor + 1):
        if not 1 <= r <= grid_rows:
            continue
        c = min(grid_cols, max(1, round_half_up(retain_count / r)))
        key = (abs(r * c - retain_count), -r, c)
        if best is None or key < best:
            best = key
    assert best is not None
    return -best[1], best[2]


def spatial_sample(bundle: TokenBundle, retain_count: int) -> CompressedSequence:
    """Centered uniform-stride lattice over the patch grid, in raster order.

    Row i of an r-row lattice sits at floor((i + 0.5) * grid_rows / r), and
    likewise for columns, so the lattice stays centered for non-divisible
    counts. The achieved count is r*c and is reported in the metadata when it
    differs from the request.
    """
    _check_count(bundle.n_visual, retain_count)
    r, c = choose_lattice(bundle.grid_rows, bundle.grid_cols, retain_count)
    rows = [(2 * i + 1) * bundle.grid_rows // (2 * r) for i in range(r)]
    cols = [(2 * j + 1) * bundle.grid_cols // (2 * c) for j in range(c)]
    indices = np.asarray(
        [row * bundle.grid_cols + col for row in rows for col in cols], dtype=np.int64
    )
    return CompressedSequence(
        embeddings=bundle.visual_embeddings[indices].copy(),
        provenance=tuple(Retained(int(i)) for i in indices),
        order_policy="original",
        meta={
            "strategy": "spatial",
            "requested_count": retain_count,
            "lattice_rows": r,
            "lattice_cols": c,
            "stride_anchor": "centered",
        },
    )
