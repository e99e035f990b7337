"""On-disk token bundle format and validated in-memory representation.

A bundle is a directory holding ``manifest.json`` plus one NPY v1.0 file per
array (C-order, little-endian). It carries everything one (image, prompt)
pair needs downstream: post-projector visual token embeddings, text token
embeddings, the patch grid geometry, per-layer attention projection weights,
and optional vision-encoder keys. All arithmetic after load happens in
float64; bundles are immutable once constructed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

_STORED_DTYPES = {"float32": np.float32, "float64": np.float64}


class BundleError(Exception):
    """Base class for bundle load/save failures."""


class BundleFormatError(BundleError, ValueError):
    """Malformed manifest, array, or invariant violation; names the field."""


class BundleIOError(BundleError, OSError):
    """Bundle directory or manifest missing / unreadable."""


def _as_float64(name: str, arr, ndim: int) -> np.ndarray:
    try:
        out = np.asarray(arr, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise BundleFormatError(f"{name}: not convertible to float array ({exc})") from exc
    if out.ndim != ndim:
        raise BundleFormatError(f"{name}: expected {ndim}-d array, got {out.ndim}-d")
    if not np.all(np.isfinite(out)):
        raise BundleFormatError(f"{name}: contains non-finite values")
    out = np.ascontiguousarray(out)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LayerWeights:
    """Query/key projection weights of one LLM layer.

    ``w_q`` and ``w_k`` map embeddings (dim D) to H concatenated heads of
    d_head columns each; head h occupies columns [h*d_head, (h+1)*d_head).
    """

    w_q: np.ndarray
    w_k: np.ndarray
    n_heads: int
    d_head: int

    def __post_init__(self):
        object.__setattr__(self, "w_q", _as_float64("w_q", self.w_q, 2))
        object.__setattr__(self, "w_k", _as_float64("w_k", self.w_k, 2))
        if self.n_heads < 1:
            raise BundleFormatError(f"n_heads: must be >= 1, got {self.n_heads}")
        if self.d_head < 1:
            raise BundleFormatError(f"d_head: must be >= 1, got {self.d_head}")
        want = self.n_heads * self.d_head
        for name, w in (("w_q", self.w_q), ("w_k", self.w_k)):
            if w.shape[1] != want:
                raise BundleFormatError(
                    f"{name}: expected {want} columns (n_heads*d_head), got {w.shape[1]}"
                )
        if self.w_q.shape[0] != self.w_k.shape[0]:
            raise BundleFormatError(
                f"w_k: row count {self.w_k.shape[0]} differs from w_q rows {self.w_q.shape[0]}"
            )

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]


@dataclass(frozen=True)
class TokenBundle:
    """Dumped embeddings, grid geometry, and projection weights for one pair."""

    visual_embeddings: np.ndarray
    text_embeddings: np.ndarray
    grid_rows: int
    grid_cols: int
    layers: tuple[LayerWeights, ...]
    visual_keys: np.ndarray | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "visual_embeddings", _as_float64("visual_embeddings", self.visual_embeddings, 2)
        )
        object.__setattr__(
            self, "text_embeddings", _as_float64("text_embeddings", self.text_embeddings, 2)
        )
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.visual_keys is not None:
            object.__setattr__(self, "visual_keys", _as_float64("visual_keys", self.visual_keys, 2))
        object.__setattr__(self, "meta", dict(self.meta))

        n_v, d = self.visual_embeddings.shape
        n_t, d_t = self.text_embeddings.shape
        if n_v < 1:
            raise BundleFormatError("visual_embeddings: need at least one visual token")
        if n_t < 1:
            raise BundleFormatError("text_embeddings: need at least one text token")
        if d < 1:
            raise BundleFormatError("visual_embeddings: embedding dim must be >= 1")
        if d_t != d:
            raise BundleFormatError(
                f"text_embeddings: dim {d_t} differs from visual embedding dim {d}"
            )
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise BundleFormatError(
                f"grid_rows/grid_cols: must be positive, got {self.grid_rows}x{self.grid_cols}"
            )
        if self.grid_rows * self.grid_cols != n_v:
            raise BundleFormatError(
                f"grid_rows*grid_cols: {self.grid_rows}*{self.grid_cols}"
                f"={self.grid_rows * self.grid_cols} != n_visual={n_v}"
            )
        if not self.layers:
            raise BundleFormatError("layers: need at least one layer")
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, LayerWeights):
                raise BundleFormatError(f"layers[{i}]: expected LayerWeights")
            if layer.dim != d:
                raise BundleFormatError(
                    f"layers[{i}].w_q: row count {layer.dim} != embedding dim {d}"
                )
        if self.visual_keys is not None and self.visual_keys.shape[0] != n_v:
            raise BundleFormatError(
                f"visual_keys: {self.visual_keys.shape[0]} rows != n_visual={n_v}"
            )
        for key, value in self.meta.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise BundleFormatError(f"meta[{key!r}]: keys and values must be strings")

    @property
    def n_visual(self) -> int:
        return self.visual_embeddings.shape[0]

    @property
    def n_text(self) -> int:
        return self.text_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.visual_embeddings.shape[1]

    def grid_position(self, index: int) -> tuple[int, int]:
        """Row-major token index -> (row, col) patch coordinate."""
        if not 0 <= index < self.n_visual:
            raise IndexError(f"token index {index} out of range [0, {self.n_visual})")
        return index // self.grid_cols, index % self.grid_cols


def _storage_dtype(arrays: list[np.ndarray]) -> str:
    """float32 when every value survives the round trip exactly, else float64."""
    for arr in arrays:
        if not np.array_equal(arr.astype(np.float32).astype(np.float64), arr):
            return "float64"
    return "float32"


def _save_array(path: Path, arr: np.ndarray, dtype: str) -> None:
    out = np.ascontiguousarray(arr.astype(_STORED_DTYPES[dtype]))
    np.save(path, out, allow_pickle=False)


def _load_array(dir_path: Path, rel_name, field_name: str, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    if not isinstance(rel_name, str) or not rel_name:
        raise BundleFormatError(f"{field_name}: manifest entry must be a file name")
    path = dir_path / rel_name
    if not path.is_file():
        raise BundleFormatError(f"{field_name}: missing array file {rel_name!r}")
    try:
        arr = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise BundleFormatError(f"{field_name}: unreadable NPY file {rel_name!r} ({exc})") from exc
    if arr.dtype != np.dtype(_STORED_DTYPES[dtype]):
        raise BundleFormatError(
            f"{field_name}: array dtype {arr.dtype} disagrees with manifest dtype {dtype}"
        )
    if arr.shape != shape:
        raise BundleFormatError(f"{field_name}: shape {arr.shape} != manifest shape {shape}")
    return arr


def _manifest_int(manifest: dict, key: str) -> int:
    value = manifest.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise BundleFormatError(f"{key}: manifest entry must be an integer, got {value!r}")
    return value


def save_bundle(bundle: TokenBundle, path) -> None:
    """Write a bundle directory; ``load_bundle`` reproduces it bit-exactly."""
    dir_path = Path(path)
    dir_path.mkdir(parents=True, exist_ok=True)

    arrays = [bundle.visual_embeddings, bundle.text_embeddings]
    for layer in bundle.layers:
        arrays += [layer.w_q, layer.w_k]
    if bundle.visual_keys is not None:
        arrays.append(bundle.visual_keys)
    dtype = _storage_dtype(arrays)

    manifest: dict = {
        "version": MANIFEST_VERSION,
        "n_visual": bundle.n_visual,
        "n_text": bundle.n_text,
        "dim": bundle.dim,
        "grid_rows": bundle.grid_rows,
        "grid_cols": bundle.grid_cols,
        "dtype": dtype,
        "visual_embeddings": "visual_embeddings.npy",
        "text_embeddings": "text_embeddings.npy",
        "layers": [],
        "meta": bundle.meta,
    }
    _save_array(dir_path / "visual_embeddings.npy", bundle.visual_embeddings, dtype)
    _save_array(dir_path / "text_embeddings.npy", bundle.text_embeddings, dtype)
    for i, layer in enumerate(bundle.layers):
        entry = {
            "w_q": f"layer_{i:02d}_w_q.npy",
            "w_k": f"layer_{i:02d}_w_k.npy",
            "n_heads": layer.n_heads,
            "d_head": layer.d_head,
        }
        _save_array(dir_path / entry["w_q"], layer.w_q, dtype)
        _save_array(dir_path / entry["w_k"], layer.w_k, dtype)
        manifest["layers"].append(entry)
    if bundle.visual_keys is not None:
        manifest["visual_keys"] = "visual_keys.npy"
        manifest["key_dim"] = int(bundle.visual_keys.shape[1])
        _save_array(dir_path / "visual_keys.npy", bundle.visual_keys, dtype)

    with open(dir_path / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(path) -> TokenBundle:
    """Load and fully validate a bundle directory."""
    dir_path = Path(path)
    manifest_path = dir_path / MANIFEST_NAME
    if not dir_path.is_dir():
        raise BundleIOError(f"bundle directory not found: {dir_path}")
    if not manifest_path.is_file():
        raise BundleIOError(f"manifest not found: {manifest_path}")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"manifest: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict):
        raise BundleFormatError("manifest: top level must be an object")

    version = _manifest_int(manifest, "version")
    if version != MANIFEST_VERSION:
        raise BundleFormatError(f"version: unsupported manifest version {version}")
    n_visual = _manifest_int(manifest, "n_visual")
    n_text = _manifest_int(manifest, "n_text")
    dim = _manifest_int(manifest, "dim")
    grid_rows = _manifest_int(manifest, "grid_rows")
    grid_cols = _manifest_int(manifest, "grid_cols")
    dtype = manifest.get("dtype", "float32")
    if dtype not in _STORED_DTYPES:
        raise BundleFormatError(f"dtype: unsupported stored dtype {dtype!r}")

    visual = _load_array(
        dir_path, manifest.get("visual_embeddings"), "visual_embeddings", dtype, (n_visual, dim)
    )
    text = _load_array(
        dir_path, manifest.get("text_embeddings"), "text_embeddings", dtype, (n_text, dim)
    )

    layer_entries = manifest.get("layers")
    if not isinstance(layer_entries, list) or not layer_entries:
        raise BundleFormatError("layers: manifest entry must be a non-empty array")
    layers = []
    for i, entry in enumerate(layer_entries):
        if not isinstance(entry, dict):
            raise BundleFormatError(f"layers[{i}]: manifest entry must be an object")
        n_heads = _manifest_int(entry, "n_heads")
        d_head = _manifest_int(entry, "d_head")
        if n_heads < 1 or d_head < 1:
            raise BundleFormatError(f"layers[{i}]: n_heads and d_head must be >= 1")
        w_q = _load_array(
            dir_path, entry.get("w_q"), f"layers[{i}].w_q", dtype, (dim, n_heads * d_head)
        )
        w_k = _load_array(
            dir_path, entry.get("w_k"), f"layers[{i}].w_k", dtype, (dim, n_heads * d_head)
        )
        layers.append(LayerWeights(w_q=w_q, w_k=w_k, n_heads=n_heads, d_head=d_head))

    visual_keys = None
    if "visual_keys" in manifest:
        key_dim = _manifest_int(manifest, "key_dim")
        visual_keys = _load_array(
            dir_path, manifest.get("visual_keys"), "visual_keys", dtype, (n_visual, key_dim)
        )

    meta = manifest.get("meta", {})
    if not isinstance(meta, dict):
        raise BundleFormatError("meta: manifest entry must be an object")

    return TokenBundle(
        visual_embeddings=visual,
        text_embeddings=text,
        grid_rows=grid_rows,
        grid_cols=grid_cols,
        layers=tuple(layers),
        visual_keys=visual_keys,
        meta=meta,
    )
