"""Shared fixtures: synthetic bundles of various shapes."""

from __future__ import annotations

import numpy as np
import pytest

from vtcompress.token_store import LayerWeights, TokenBundle


def make_layer(rng: np.random.Generator, d: int, n_heads: int, d_head: int) -> LayerWeights:
    return LayerWeights(
        w_q=rng.normal(size=(d, n_heads * d_head)),
        w_k=rng.normal(size=(d, n_heads * d_head)),
        n_heads=n_heads,
        d_head=d_head,
    )


def make_bundle(
    seed: int,
    grid_rows: int = 2,
    grid_cols: int = 2,
    n_text: int = 3,
    dim: int = 5,
    heads: tuple[tuple[int, int], ...] = ((2, 4),),
    with_keys: bool = False,
    scale: float = 1.0,
) -> TokenBundle:
    """Random bundle; ``heads`` gives (n_heads, d_head) per layer."""
    rng = np.random.default_rng(seed)
    n_visual = grid_rows * grid_cols
    return TokenBundle(
        visual_embeddings=scale * rng.normal(size=(n_visual, dim)),
        text_embeddings=scale * rng.normal(size=(n_text, dim)),
        grid_rows=grid_rows,
        grid_cols=grid_cols,
        layers=tuple(make_layer(rng, dim, h, dh) for h, dh in heads),
        visual_keys=rng.normal(size=(n_visual, 4)) if with_keys else None,
        meta={"source": "synthetic"},
    )


def blob_points(
    rng: np.random.Generator,
    sizes,
    dim: int,
    center_scale: float = 10.0,
    within_scale: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Points drawn from well-separated Gaussian blobs of the given sizes.

    Returns (points, true_labels) with rows shuffled so blob membership is
    decoupled from token order.
    """
    sizes = np.asarray(sizes, dtype=int)
    centers = rng.normal(0.0, center_scale, size=(len(sizes), dim))
    chunks = []
    labels = []
    for b, size in enumerate(sizes):
        chunks.append(centers[b] + rng.normal(0.0, within_scale, size=(size, dim)))
        labels.extend([b] * int(size))
    points = np.vstack(chunks)
    labels = np.asarray(labels)
    perm = rng.permutation(int(sizes.sum()))
    return points[perm], labels[perm]


# Uneven cluster sizes summing to 576, chosen off the .5 rounding boundaries
# of the per-cluster budgets at x=11%, lambda=1, and lambda=1.5.
BLOB_SIZES_576 = (24,) * 6 + (34,) * 10 + (23,) * 4


@pytest.fixture(scope="session")
def blob_bundle_576() -> TokenBundle:
    """576 tokens on a 24x24 grid whose embeddings form 20 uneven blobs."""
    rng = np.random.default_rng(99)
    points, _ = blob_points(rng, BLOB_SIZES_576, 16)
    return TokenBundle(
        visual_embeddings=points,
        text_embeddings=rng.normal(size=(6, 16)),
        grid_rows=24,
        grid_cols=24,
        layers=(make_layer(rng, 16, 2, 8),),
        meta={"source": "synthetic-blobs"},
    )


@pytest.fixture()
def tiny_bundle() -> TokenBundle:
    """Handcrafted 4-token bundle (N_v=4, N_t=2, D=3, H=1, d_head=3)."""
    return TokenBundle(
        visual_embeddings=np.array(
            [[1.0, 0.0, 0.5], [0.0, 2.0, -1.0], [0.25, 0.25, 0.25], [-1.0, 0.5, 3.0]]
        ),
        text_embeddings=np.array([[1.0, 1.0, 0.0], [0.0, -1.0, 2.0]]),
        grid_rows=2,
        grid_cols=2,
        layers=(
            LayerWeights(
                w_q=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
                w_k=np.array([[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]]),
                n_heads=1,
                d_head=3,
            ),
        ),
        meta={"image": "unit-test"},
    )
