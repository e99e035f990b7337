"""Extraction against a tiny randomly initialized LLaVA-style model.

The model keeps the real LLaVA-1.5 geometry (336px images, patch 14 ->
24x24 = 576 visual tokens) with tiny hidden sizes so everything runs on CPU
in seconds. Emitted bundles are validated through the consumer's CLI
(``python -m vtcompress validate``), which must be installed.
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image
from tokenizers import Tokenizer, models, pre_tokenizers
from transformers import (
    CLIPImageProcessor,
    CLIPVisionConfig,
    LlamaConfig,
    LlavaConfig,
    LlavaForConditionalGeneration,
    PreTrainedTokenizerFast,
)

from vtc_extractor.llava import ExtractionJob, LlavaTap, extract

VOCAB = {
    "<unk>": 0, "<s>": 1, "what": 2, "color": 3, "is": 4, "the": 5,
    "cat": 6, "dog": 7, "doing": 8, "where": 9, "sitting": 10,
}


def build_tiny_model(num_key_value_heads: int = 4) -> LlavaForConditionalGeneration:
    vision = CLIPVisionConfig(
        hidden_size=32, intermediate_size=64, num_hidden_layers=3,
        num_attention_heads=4, image_size=336, patch_size=14, projection_dim=32,
    )
    text = LlamaConfig(
        hidden_size=48, intermediate_size=96, num_hidden_layers=3,
        num_attention_heads=4, num_key_value_heads=num_key_value_heads,
        vocab_size=len(VOCAB) + 1, max_position_embeddings=64,
    )
    config = LlavaConfig(vision_config=vision, text_config=text,
                         image_token_index=len(VOCAB))
    torch.manual_seed(0)
    return LlavaForConditionalGeneration(config).eval()


def build_tokenizer() -> PreTrainedTokenizerFast:
    tok = Tokenizer(models.WordLevel(VOCAB, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    return PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="<unk>", bos_token="<s>")


@pytest.fixture(scope="module")
def setup():
    model = build_tiny_model()
    tokenizer = build_tokenizer()
    processor = CLIPImageProcessor(
        size={"shortest_edge": 336}, crop_size={"height": 336, "width": 336}
    )
    rng = np.random.default_rng(7)
    image = Image.fromarray(rng.integers(0, 255, size=(336, 336, 3), dtype=np.uint8))
    return model, tokenizer, processor, image


def validate_via_cli(bundle_dir: Path) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "vtcompress", "validate", str(bundle_dir)],
        capture_output=True,
        text=True,
    )


def test_extraction_emits_llava_geometry(setup, tmp_path):
    model, tokenizer, processor, image = setup
    job = ExtractionJob(
        model_id="tiny-llava-test",
        images=[image],
        prompts=["what is the cat doing"],
        out_dir=tmp_path,
    )
    (out,) = extract(job, model, tokenizer, processor)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_visual"] == 576
    assert manifest["grid_rows"] == 24 and manifest["grid_cols"] == 24
    assert manifest["dtype"] == "float32"
    assert manifest["meta"]["system_tokens_included"] == "false"
    assert manifest["meta"]["embedding_norm"] == "first_layer_input_rmsnorm"

    proc = validate_via_cli(out)
    assert proc.returncode == 0, proc.stderr
    assert "n_visual=576" in proc.stdout
    assert "grid=24x24" in proc.stdout


def test_visual_arrays_byte_identical_across_prompts(setup, tmp_path):
    model, tokenizer, processor, image = setup
    job = ExtractionJob(
        model_id="tiny-llava-test",
        images=[image],
        prompts=["what is the cat doing", "where is the dog sitting"],
        out_dir=tmp_path,
    )
    first, second = extract(job, model, tokenizer, processor)
    for name in ("visual_embeddings.npy", "visual_keys.npy"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    # prompts differ, so the text arrays must differ
    assert (first / "text_embeddings.npy").read_bytes() != (
        second / "text_embeddings.npy"
    ).read_bytes()
    for out in (first, second):
        assert validate_via_cli(out).returncode == 0


def test_empty_prompt_rejected(tmp_path):
    with pytest.raises(ValueError, match="empty prompt"):
        ExtractionJob(
            model_id="tiny-llava-test",
            images=["x.png"],
            prompts=["   "],
            out_dir=tmp_path,
        )


def test_multiple_layers_dumped(setup, tmp_path):
    model, tokenizer, processor, image = setup
    job = ExtractionJob(
        model_id="tiny-llava-test",
        images=[image],
        prompts=["what is the cat doing"],
        out_dir=tmp_path,
        layer_indices=[0, 2],
    )
    (out,) = extract(job, model, tokenizer, processor)
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["layers"]) == 2
    assert validate_via_cli(out).returncode == 0


def test_gqa_key_weights_tiled_per_group(setup):
    model = build_tiny_model(num_key_value_heads=2)
    tap = LlavaTap(model, build_tokenizer(), setup[2])
    w_q, w_k, n_heads, d_head = tap.layer_weights(0)
    assert n_heads == 4 and d_head == 12
    assert w_q.shape == (48, 48) and w_k.shape == (48, 48)
    # query heads 0 and 1 share KV head 0; heads 2 and 3 share KV head 1
    np.testing.assert_array_equal(w_k[:, 0:12], w_k[:, 12:24])
    np.testing.assert_array_equal(w_k[:, 24:36], w_k[:, 36:48])
    assert not np.array_equal(w_k[:, 0:12], w_k[:, 24:36])


def test_first_norm_flag_changes_embeddings(setup, tmp_path):
    model, tokenizer, processor, image = setup
    normed = LlavaTap(model, tokenizer, processor, apply_first_norm=True)
    raw = LlavaTap(model, tokenizer, processor, apply_first_norm=False)
    text_normed, _ = normed.text_array("what is the cat doing")
    text_raw, _ = raw.text_array("what is the cat doing")
    assert text_normed.shape == text_raw.shape
    assert not np.allclose(text_normed, text_raw)

    job = ExtractionJob(
        model_id="tiny-llava-test",
        images=[image],
        prompts=["what is the cat doing"],
        out_dir=tmp_path,
        apply_first_norm=False,
    )
    (out,) = extract(job, model, tokenizer, processor)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["meta"]["embedding_norm"] == "none"


def test_extracted_bundle_feeds_compression_pipeline(setup, tmp_path):
    model, tokenizer, processor, image = setup
    job = ExtractionJob(
        model_id="tiny-llava-test",
        images=[image],
        prompts=["what color is the cat"],
        out_dir=tmp_path / "dump",
    )
    (bundle,) = extract(job, model, tokenizer, processor)
    out = tmp_path / "compressed"
    proc = subprocess.run(
        [sys.executable, "-m", "vtcompress", "compress", str(bundle),
         "--strategy", "cluster-aggregate", "--k", "64", "--seed", "7",
         "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "576 -> 64 (11.1%)" in proc.stdout
    assert (out / "provenance.json").is_file()
