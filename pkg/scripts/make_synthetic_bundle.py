#!/usr/bin/env python3
"""Emit a synthetic token bundle for experimenting without a model dump.

Visual embeddings are drawn from well-separated Gaussian blobs so that
cluster-based strategies have structure to find.

    python3 scripts/make_synthetic_bundle.py out/bundle --grid 24 24 --blobs 20
"""

from __future__ import annotations

import argparse

import numpy as np

from vtcompress.token_store import LayerWeights, TokenBundle, save_bundle


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out")
    parser.add_argument("--grid", type=int, nargs=2, default=(24, 24), metavar=("ROWS", "COLS"))
    parser.add_argument("--n-text", type=int, default=8)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--blobs", type=int, default=20)
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--heads", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    rows, cols = args.grid
    n_visual = rows * cols
    d_head = max(1, args.dim // args.heads)

    centers = rng.normal(0.0, 8.0, size=(args.blobs, args.dim))
    assignment = rng.integers(0, args.blobs, size=n_visual)
    visual = centers[assignment] + rng.normal(0.0, 0.5, size=(n_visual, args.dim))

    bundle = TokenBundle(
        visual_embeddings=visual.astype(np.float32),
        text_embeddings=rng.normal(size=(args.n_text, args.dim)).astype(np.float32),
        grid_rows=rows,
        grid_cols=cols,
        layers=tuple(
            LayerWeights(
                w_q=rng.normal(size=(args.dim, args.heads * d_head)).astype(np.float32),
                w_k=rng.normal(size=(args.dim, args.heads * d_head)).astype(np.float32),
                n_heads=args.heads,
                d_head=d_head,
            )
            for _ in range(args.layers)
        ),
        meta={"source": "make_synthetic_bundle", "seed": str(args.seed)},
    )
    save_bundle(bundle, args.out)
    print(f"wrote {args.out}: {n_visual} visual tokens ({rows}x{cols}), "
          f"{args.n_text} text tokens, dim {args.dim}, {args.layers} layers")


if __name__ == "__main__":
    main()
