"""Tap points for LLaVA-style autoregressive VLMs (HuggingFace layout).

Dumps, per (image, prompt) pair: post-projector visual token embeddings,
text token embeddings, per-layer W_Q/W_K of the language model, and
optionally the vision encoder's key embeddings. Visual arrays are computed
once per image and shared across prompts, so the emitted files are
byte-identical for a fixed image.

Embeddings are passed through the language model's first input RMSNorm by
default (what the first attention block actually multiplies by W_Q/W_K);
the choice is recorded in the bundle's ``meta``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .bundle_writer import write_bundle

EXTRACTOR_VERSION = "0.1.0"


@dataclass
class ExtractionJob:
    model_id: str
    images: list
    prompts: list[str]
    out_dir: Path
    layer_indices: list[int] = field(default_factory=lambda: [0])
    dtype: str = "float32"
    include_keys: bool = True
    apply_first_norm: bool = True
    key_layer: int = -1

    def __post_init__(self):
        if not self.images or not self.prompts:
            raise ValueError("need at least one (image, prompt) pair")
        for prompt in self.prompts:
            if not prompt or not prompt.strip():
                raise ValueError("empty prompt (text embeddings need >= 1 token)")


class LlavaTap:
    """Wraps a loaded LLaVA-style model and exposes the dump tap points."""

    def __init__(self, model, tokenizer, image_processor, apply_first_norm: bool = True,
                 key_layer: int = -1):
        self.model = model.eval()
        self.tokenizer = tokenizer
        self.image_processor = image_processor
        self.apply_first_norm = apply_first_norm
        self.key_layer_index = key_layer
        self.core = model.model  # vision_tower / multi_modal_projector / language_model
        self.config = model.config
        if self.config.vision_feature_select_strategy != "default":
            raise ValueError(
                "only the CLS-dropping 'default' vision feature selection is supported"
            )

    # ------------------------------------------------------------- visual

    def visual_arrays(self, image: Image.Image) -> tuple[np.ndarray, np.ndarray | None, int]:
        """(post-projector embeddings, optional encoder keys, grid side)."""
        pixel = self.image_processor(images=image, return_tensors="pt")["pixel_values"]
        pixel = pixel.to(dtype=next(self.core.vision_tower.parameters()).dtype)

        captured: list[torch.Tensor] = []
        tower = self.core.vision_tower
        hook = tower.encoder.layers[self.key_layer_index].self_attn.k_proj.register_forward_hook(
            lambda module, args, output: captured.append(output.detach())
        )
        try:
            with torch.no_grad():
                out = tower(pixel, output_hidden_states=True)
        finally:
            hook.remove()

        feats = out.hidden_states[self.config.vision_feature_layer][:, 1:]  # drop CLS
        with torch.no_grad():
            projected = self.core.multi_modal_projector(feats)
            if self.apply_first_norm:
                projected = self._first_norm(projected)

        keys = captured[0][:, 1:] if captured else None
        n_visual = projected.shape[1]
        side = int(round(n_visual**0.5))
        if side * side != n_visual:
            raise ValueError(f"visual token count {n_visual} is not a square grid")
        visual = projected[0].to(torch.float32).cpu().numpy()
        key_arr = keys[0].to(torch.float32).cpu().numpy() if keys is not None else None
        return visual, key_arr, side

    # --------------------------------------------------------------- text

    def text_array(self, prompt: str) -> tuple[np.ndarray, list[int]]:
        ids = self.tokenizer(prompt, return_tensors="pt").input_ids
        if ids.numel() < 1:
            raise ValueError("prompt tokenized to zero tokens")
        with torch.no_grad():
            emb = self.core.language_model.embed_tokens(ids)
            if self.apply_first_norm:
                emb = self._first_norm(emb)
        return emb[0].to(torch.float32).cpu().numpy(), ids[0].tolist()

    # ------------------------------------------------------------ weights

    def layer_weights(self, index: int) -> tuple[np.ndarray, np.ndarray, int, int]:
        layers = self.core.language_model.layers
        if not 0 <= index < len(layers):
            raise ValueError(f"layer index {index} out of range (model has {len(layers)})")
        attn = layers[index].self_attn
        n_heads = self.config.text_config.num_attention_heads
        w_q = attn.q_proj.weight.detach()
        d_head = w_q.shape[0] // n_heads
        w_k = attn.k_proj.weight.detach()
        n_kv = w_k.shape[0] // d_head
        if n_kv != n_heads:
            # grouped-query attention: repeat each KV head across its query group
            reps = n_heads // n_kv
            w_k = w_k.reshape(n_kv, d_head, -1).repeat_interleave(reps, dim=0)
            w_k = w_k.reshape(n_heads * d_head, -1)
        return (
            w_q.T.to(torch.float32).cpu().numpy(),
            w_k.T.to(torch.float32).cpu().numpy(),
            n_heads,
            d_head,
        )

    def _first_norm(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.core.language_model.layers[0].input_layernorm(hidden)


def _image_sha256(image: Image.Image) -> str:
    return hashlib.sha256(np.asarray(image).tobytes()).hexdigest()


def _load_image(source) -> tuple[Image.Image, str]:
    if isinstance(source, Image.Image):
        return source.convert("RGB"), "in-memory"
    path = Path(source)
    return Image.open(path).convert("RGB"), path.name


def extract(job: ExtractionJob, model, tokenizer, image_processor) -> list[Path]:
    """Emit one bundle directory per (image, prompt) pair."""
    tap = LlavaTap(model, tokenizer, image_processor,
                   apply_first_norm=job.apply_first_norm, key_layer=job.key_layer)

    layer_dump = [tap.layer_weights(i) for i in job.layer_indices]
    norm_note = "first_layer_input_rmsnorm" if job.apply_first_norm else "none"

    emitted: list[Path] = []
    for image_idx, source in enumerate(job.images):
        image, image_name = _load_image(source)
        visual, keys, side = tap.visual_arrays(image)
        if not job.include_keys:
            keys = None
        image_hash = _image_sha256(image)
        for prompt_idx, prompt in enumerate(job.prompts):
            text, token_ids = tap.text_array(prompt)
            meta = {
                "model": job.model_id,
                "prompt": prompt,
                "image": image_name,
                "image_sha256": image_hash,
                "n_prompt_tokens": str(len(token_ids)),
                "system_tokens_included": "false",
                "embedding_norm": norm_note,
                "vision_feature_layer": str(tap.config.vision_feature_layer),
                "layer_indices": ",".join(str(i) for i in job.layer_indices),
                "extractor": f"vtc-extractor {EXTRACTOR_VERSION}",
            }
            if keys is not None:
                meta["key_layer"] = str(job.key_layer)
            out = Path(job.out_dir) / f"img{image_idx:03d}_p{prompt_idx:02d}"
            write_bundle(
                out,
                visual_embeddings=visual,
                text_embeddings=text,
                grid_rows=side,
                grid_cols=side,
                layers=layer_dump,
                visual_keys=keys,
                meta=meta,
                dtype=job.dtype,
            )
            emitted.append(out)
    return emitted
