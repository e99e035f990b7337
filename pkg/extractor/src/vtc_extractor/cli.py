"""Command-line extraction from a HuggingFace LLaVA-style checkpoint.

    vtc-extract --model llava-hf/llava-1.5-7b-hf \
        --image cat.jpg --prompt "what is the cat doing" \
        --layers 0 --out dumps/
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vtc-extract", description=__doc__)
    parser.add_argument("--model", required=True, help="checkpoint path or hub id")
    parser.add_argument("--image", action="append", required=True, dest="images")
    parser.add_argument("--prompt", action="append", required=True, dest="prompts")
    parser.add_argument("--layers", default="0", help="comma-separated LLM layer indices")
    parser.add_argument("--out", required=True)
    parser.add_argument("--no-keys", action="store_true",
                        help="skip the vision-encoder key dump")
    parser.add_argument("--no-first-norm", action="store_true",
                        help="dump raw embeddings instead of post-RMSNorm inputs")
    parser.add_argument("--key-layer", type=int, default=-1)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    import torch
    from transformers import AutoProcessor, LlavaForConditionalGeneration

    from .llava import ExtractionJob, extract

    try:
        job = ExtractionJob(
            model_id=args.model,
            images=[Path(p) for p in args.images],
            prompts=args.prompts,
            out_dir=Path(args.out),
            layer_indices=[int(part) for part in args.layers.split(",") if part.strip()],
            include_keys=not args.no_keys,
            apply_first_norm=not args.no_first_norm,
            key_layer=args.key_layer,
        )
    except ValueError as exc:
        print(f"vtc-extract: error: {exc}", file=sys.stderr)
        return 2

    model = LlavaForConditionalGeneration.from_pretrained(
        args.model, dtype=torch.float32
    ).to(args.device)
    processor = AutoProcessor.from_pretrained(args.model)

    try:
        emitted = extract(job, model, processor.tokenizer, processor.image_processor)
    except ValueError as exc:
        print(f"vtc-extract: error: {exc}", file=sys.stderr)
        return 2
    for path in emitted:
        print(f"wrote: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
