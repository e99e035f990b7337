"""Writer for the vtcompress token bundle directory format.

This mirrors the consumer's on-disk contract (manifest.json + NPY v1.0
arrays, C-order, little-endian) without importing it: the file format is the
interface between the two packages.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST_VERSION = 1


def _save(path: Path, arr: np.ndarray, dtype: str) -> None:
    np.save(path, np.ascontiguousarray(arr, dtype=np.dtype(dtype)), allow_pickle=False)


def write_bundle(
    out_dir,
    visual_embeddings: np.ndarray,
    text_embeddings: np.ndarray,
    grid_rows: int,
    grid_cols: int,
    layers: list[tuple[np.ndarray, np.ndarray, int, int]],
    visual_keys: np.ndarray | None = None,
    meta: dict[str, str] | None = None,
    dtype: str = "float32",
) -> Path:
    """Write one bundle; ``layers`` holds (w_q, w_k, n_heads, d_head) tuples."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    n_visual, dim = visual_embeddings.shape
    if grid_rows * grid_cols != n_visual:
        raise ValueError(f"grid {grid_rows}x{grid_cols} does not cover {n_visual} tokens")

    manifest: dict = {
        "version": MANIFEST_VERSION,
        "n_visual": int(n_visual),
        "n_text": int(text_embeddings.shape[0]),
        "dim": int(dim),
        "grid_rows": int(grid_rows),
        "grid_cols": int(grid_cols),
        "dtype": dtype,
        "visual_embeddings": "visual_embeddings.npy",
        "text_embeddings": "text_embeddings.npy",
        "layers": [],
        "meta": {str(k): str(v) for k, v in (meta or {}).items()},
    }
    _save(out / "visual_embeddings.npy", visual_embeddings, dtype)
    _save(out / "text_embeddings.npy", text_embeddings, dtype)
    for i, (w_q, w_k, n_heads, d_head) in enumerate(layers):
        entry = {
            "w_q": f"layer_{i:02d}_w_q.npy",
            "w_k": f"layer_{i:02d}_w_k.npy",
            "n_heads": int(n_heads),
            "d_head": int(d_head),
        }
        _save(out / entry["w_q"], w_q, dtype)
        _save(out / entry["w_k"], w_k, dtype)
        manifest["layers"].append(entry)
    if visual_keys is not None:
        manifest["visual_keys"] = "visual_keys.npy"
        manifest["key_dim"] = int(visual_keys.shape[1])
        _save(out / "visual_keys.npy", visual_keys, dtype)

    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
