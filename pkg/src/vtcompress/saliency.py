"""Cross-modal saliency scores for visual tokens, plus ranking analysis tools.

The score of a visual token is computed from key/query projections of the
embeddings: per head, the token's key is dotted against every text token's
query, the resulting row is softmax-normalized across text tokens, the
per-text maximum across heads is taken, and those maxima are averaged over
text tokens. Scores therefore live in [1/N_t, 1] (each softmax row over text
sums to 1, so any single head's text-mean is exactly 1/N_t; the head-max
dominates any single head pointwise, and every entry is at most 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._common import stable_softmax
from .token_store import TokenBundle

SOFTMAX_DIMS = ("text", "visual")

# One head makes the max a no-op: every score collapses to exactly 1/N_t.
DEGENERATE_SINGLE_HEAD_NOTE = (
    "layer has a single attention head; saliency is constant (1/n_text) and carries no ranking"
)


@dataclass(frozen=True)
class SaliencyMap:
    """Per-visual-token scores with provenance of how they were computed."""

    scores: np.ndarray
    layer_index: int
    softmax_scaled: bool
    softmax_dim: str = "text"

    def __post_init__(self):
        scores = np.ascontiguousarray(np.asarray(self.scores, dtype=np.float64))
        if scores.ndim != 1 or scores.size < 1:
            raise ValueError("scores: expected a non-empty 1-d vector")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores: contains non-finite values")
        if np.any(scores <= 0.0) or np.any(scores > 1.0):
            raise ValueError("scores: values must lie in (0, 1]")
        if self.softmax_dim not in SOFTMAX_DIMS:
            raise ValueError(f"softmax_dim: must be one of {SOFTMAX_DIMS}")
        scores.flags.writeable = False
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return self.scores.shape[0]


def compute_saliency(
    bundle: TokenBundle,
    layer_index: int = 0,
    scaled: bool = True,
    softmax_dim: str = "text",
) -> SaliencyMap:
    """Score every visual token against the text tokens of one layer.

    ``scaled`` multiplies raw dot products by 1/sqrt(d_head) (what the
    attention layer itself computes). ``softmax_dim="visual"`` normalizes
    across visual tokens instead of text tokens; it is an ablation and loses
    the 1/N_t lower bound.
    """
    if not 0 <= layer_index < len(bundle.layers):
        raise ValueError(
            f"layer_index {layer_index} out of range for bundle with {len(bundle.layers)} layers"
        )
    if softmax_dim not in SOFTMAX_DIMS:
        raise ValueError(f"softmax_dim: must be one of {SOFTMAX_DIMS}")
    layer = bundle.layers[layer_index]
    n_v, n_t = bundle.n_visual, bundle.n_text
    h, d_head = layer.n_heads, layer.d_head

    keys = (bundle.visual_embeddings @ layer.w_k).reshape(n_v, h, d_head)
    queries = (bundle.text_embeddings @ layer.w_q).reshape(n_t, h, d_head)
    raw = np.einsum("vhd,thd->vht", keys, queries)
    if scaled:
        raw = raw * (1.0 / math.sqrt(d_head))

    axis = 2 if softmax_dim == "text" else 0
    probs = stable_softmax(raw, axis=axis)
    per_text_max = probs.max(axis=1)  # (n_v, n_t)
    scores = per_text_max.mean(axis=1)

    return SaliencyMap(
        scores=scores, layer_index=layer_index, softmax_scaled=scaled, softmax_dim=softmax_dim
    )


def basic_saliency_select(saliency: SaliencyMap, retain_count: int) -> np.ndarray:
    """Indices of the ``retain_count`` highest scores, ascending.

    Ties break toward the lower original index; output order preserves the
    tokens' spatial order.
    """
    n = len(saliency)
    if not 1 <= retain_count <= n:
        raise ValueError(f"retain_count must be in [1, {n}], got {retain_count}")
    order = np.argsort(-saliency.scores, kind="stable")
    return np.sort(order[:retain_count])


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    n = values.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_correlation(a, b) -> float | None:
    """Spearman rank correlation with average-rank tie handling.

    Accepts SaliencyMaps or plain score vectors. Returns None when either
    ranking has zero variance (correlation undefined), never NaN.
    """
    va = np.asarray(getattr(a, "scores", a), dtype=np.float64)
    vb = np.asarray(getattr(b, "scores", b), dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise ValueError(f"length mismatch: {va.shape} vs {vb.shape}")
    ra = _average_ranks(va)
    rb = _average_ranks(vb)
    da = ra - ra.mean()
    db = rb - rb.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return None
    rho = float(da @ db) / denom
    return min(1.0, max(-1.0, rho))


def export_heatmap(saliency, grid: tuple[int, int], path, fmt: str = "pgm") -> None:
    """Write scores as a row-major grid: raw-score CSV or min-max PGM (P2).

    PGM normalizes scores to 0..255 (half-up rounding); an all-equal map has
    no range and is emitted as mid-gray 128.
    """
    scores = np.asarray(getattr(saliency, "scores", saliency), dtype=np.float64)
    rows, cols = int(grid[0]), int(grid[1])
    if rows < 1 or cols < 1:
        raise ValueError(f"grid must be positive, got {rows}x{cols}")
    if scores.ndim != 1 or scores.shape[0] != rows * cols:
        raise ValueError(f"saliency length {scores.shape[0]} != grid {rows}x{cols}")
    if fmt not in ("pgm", "csv"):
        raise ValueError(f"format must be 'pgm' or 'csv', got {fmt!r}")

    out = Path(path)
    if fmt == "csv":
        lines = []
        for r in range(rows):
            row = scores[r * cols : (r + 1) * cols]
            lines.append(",".join(f"{float(v)!r}" for v in row))
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return

    lo, hi = float(scores.min()), float(scores.max())
    if hi == lo:
        pixels = np.full(scores.shape, 128, dtype=np.int64)
    else:
        norm = (scores - lo) / (hi - lo)
        pixels = np.floor(norm * 255.0 + 0.5).astype(np.int64)
    lines = ["P2", f"{cols} {rows}", "255"]
    for r in range(rows):
        row = pixels[r * cols : (r + 1) * cols]
        # netpbm ASCII lines must stay at/below 70 characters
        line = ""
        for v in row:
            tok = str(int(v))
            if line and len(line) + 1 + len(tok) > 70:
                lines.append(line)
                line = tok
            else:
                line = tok if not line else line + " " + tok
        lines.append(line)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
