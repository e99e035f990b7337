"""Compressed token sequences: retained/aggregated outputs with provenance.

Every compression strategy emits a CompressedSequence. Each output token is
either a retained input token (tracked by source index) or an aggregate of
several inputs (tracked by member indices and their mean grid position).
Sequences serialize to a directory holding ``manifest.json``, one NPY file
for the embeddings, and ``provenance.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
PROVENANCE_NAME = "provenance.json"
ORDER_POLICIES = ("original", "random", "mean_position")


@dataclass(frozen=True)
class Retained:
    source_index: int


@dataclass(frozen=True)
class Aggregated:
    member_indices: tuple[int, ...]
    mean_position: tuple[float, float]  # (row, col), fractional


@dataclass(frozen=True)
class CompressedSequence:
    embeddings: np.ndarray
    provenance: tuple[Retained | Aggregated, ...]
    order_policy: str = "original"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        emb = np.ascontiguousarray(np.asarray(self.embeddings, dtype=np.float64))
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise ValueError("embeddings: expected a non-empty 2-d matrix")
        if not np.all(np.isfinite(emb)):
            raise ValueError("embeddings: contains non-finite values")
        emb.flags.writeable = False
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "provenance", tuple(self.provenance))
        object.__setattr__(self, "meta", dict(self.meta))

        if len(self.provenance) != emb.shape[0]:
            raise ValueError(
                f"provenance length {len(self.provenance)} != token count {emb.shape[0]}"
            )
        if self.order_policy not in ORDER_POLICIES:
            raise ValueError(f"order_policy must be one of {ORDER_POLICIES}")

        seen: set[int] = set()
        last_retained = -1
        for record in self.provenance:
            if isinstance(record, Retained):
                members = (record.source_index,)
                if self.order_policy == "original" and record.source_index <= last_retained:
                    raise ValueError("retained source indices must be strictly increasing")
                last_retained = record.source_index if self.order_policy == "original" else last_retained
            elif isinstance(record, Aggregated):
                members = tuple(record.member_indices)
                if not members:
                    raise ValueError("aggregated record with no members")
            else:
                raise ValueError(f"unknown provenance record {record!r}")
            for m in members:
                if m in seen:
                    raise ValueError(f"source index {m} appears in multiple provenance records")
                seen.add(m)

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def n_retained(self) -> int:
        return sum(1 for r in self.provenance if isinstance(r, Retained))

    @property
    def n_aggregated(self) -> int:
        return len(self) - self.n_retained

    def retained_indices(self) -> np.ndarray:
        """Source indices of retained tokens, in output order."""
        return np.array(
            [r.source_index for r in self.provenance if isinstance(r, Retained)], dtype=np.int64
        )

    def source_index_set(self) -> set[int]:
        """Every input index covered by any provenance record."""
        out: set[int] = set()
        for record in self.provenance:
            if isinstance(record, Retained):
                out.add(record.source_index)
            else:
                out.update(record.member_indices)
        return out


def retained_from(source_embeddings: np.ndarray, indices, meta: dict) -> CompressedSequence:
    """Build a pure-selection sequence from source rows, ascending order."""
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    return CompressedSequence(
        embeddings=source_embeddings[idx].copy(),
        provenance=tuple(Retained(int(i)) for i in idx),
        order_policy="original",
        meta=meta,
    )


def _token_records(seq: CompressedSequence) -> list[dict]:
    tokens: list[dict] = []
    for record in seq.provenance:
        if isinstance(record, Retained):
            tokens.append({"kind": "retained", "source_index": int(record.source_index)})
        else:
            tokens.append(
                {
                    "kind": "aggregated",
                    "member_indices": [int(m) for m in record.member_indices],
                    "mean_position": [float(record.mean_position[0]), float(record.mean_position[1])],
                }
            )
    return tokens


def save_compressed(seq: CompressedSequence, path) -> None:
    dir_path = Path(path)
    dir_path.mkdir(parents=True, exist_ok=True)

    emb = seq.embeddings
    exact32 = np.array_equal(emb.astype(np.float32).astype(np.float64), emb)
    dtype = "float32" if exact32 else "float64"
    np.save(dir_path / "embeddings.npy", emb.astype(np.float32) if exact32 else emb,
            allow_pickle=False)

    manifest = {
        "version": 1,
        "kind": "compressed_sequence",
        "n_tokens": len(seq),
        "dim": seq.dim,
        "dtype": dtype,
        "embeddings": "embeddings.npy",
        "meta": seq.meta,
    }
    with open(dir_path / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    provenance = {
        "version": 1,
        "order_policy": seq.order_policy,
        "seed": seq.meta.get("seed"),
        "rng": seq.meta.get("rng"),
        "tokens": _token_records(seq),
    }
    with open(dir_path / PROVENANCE_NAME, "w", encoding="utf-8") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_compressed(path) -> CompressedSequence:
    dir_path = Path(path)
    with open(dir_path / MANIFEST_NAME, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "compressed_sequence":
        raise ValueError(f"not a compressed sequence directory: {dir_path}")
    emb = np.load(dir_path / manifest["embeddings"], allow_pickle=False)
    with open(dir_path / PROVENANCE_NAME, encoding="utf-8") as fh:
        prov = json.load(fh)
    records: list[Retained | Aggregated] = []
    for token in prov["tokens"]:
        if token["kind"] == "retained":
            records.append(Retained(int(token["source_index"])))
        else:
            pos = token["mean_position"]
            records.append(
                Aggregated(tuple(int(m) for m in token["member_indices"]), (pos[0], pos[1]))
            )
    return CompressedSequence(
        embeddings=emb,
        provenance=tuple(records),
        order_policy=prov["order_policy"],
        meta=manifest.get("meta", {}),
    )
