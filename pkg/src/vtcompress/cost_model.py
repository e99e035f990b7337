"""Prefill cost estimates for a dense decoder under visual token reduction.

Standard dense-decoder accounting with 2 FLOPs per multiply-accumulate:
QKV+output projections (8*T*d^2 per layer for MHA), quadratic attention
scores plus value mixing (4*T^2*d per layer), the MLP (6*T*d*d_ff gated,
4*T*d*d_ff plain), and the LM head (2*T*d*V). Softmax and normalization
FLOPs are excluded (sub-1% at these shapes). Weight traffic counts every
parameter once; activation working set uses a declared multiplier ALPHA on
the T*d term plus the H*T^2 attention matrix. Prefill time is the roofline
max of compute time and memory time. All counts use exact integer
arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ._common import round_half_up

FFN_STYLES = ("gated", "plain")

# declared working-set multiplier for the linear activation term
DEFAULT_ALPHA = 12

EXCLUDED_TERMS = "softmax and normalization flops excluded"


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    d_model: int
    n_heads: int
    d_head: int
    d_ff: int
    ffn_style: str
    vocab_size: int
    bytes_per_param: int = 2
    bytes_per_act: int = 2

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "d_head", "d_ff", "vocab_size",
                     "bytes_per_param", "bytes_per_act"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.ffn_style not in FFN_STYLES:
            raise ValueError(f"ffn_style must be one of {FFN_STYLES}")
        if self.n_heads * self.d_head != self.d_model:
            raise ValueError(
                f"n_heads*d_head must equal d_model "
                f"({self.n_heads}*{self.d_head} != {self.d_model})"
            )

    @property
    def param_count(self) -> int:
        """Embedding + per-layer attention/MLP matrices + untied LM head."""
        n_mlp_mats = 3 if self.ffn_style == "gated" else 2
        per_layer = 4 * self.d_model * self.d_model + n_mlp_mats * self.d_model * self.d_ff
        return 2 * self.vocab_size * self.d_model + self.n_layers * per_layer


@dataclass(frozen=True)
class HardwareConfig:
    peak_flops: float
    mem_bandwidth: float

    def __post_init__(self):
        if not self.peak_flops > 0:
            raise ValueError("peak_flops must be positive")
        if not self.mem_bandwidth > 0:
            raise ValueError("mem_bandwidth must be positive")


@dataclass(frozen=True)
class CostQuery:
    n_text_tokens: int
    n_visual_tokens_full: int
    retention_fraction: float

    def __post_init__(self):
        if self.n_text_tokens < 0 or self.n_visual_tokens_full < 0:
            raise ValueError("token counts must be non-negative")
        if not 0.0 < self.retention_fraction <= 1.0:
            raise ValueError(
                f"retention_fraction must be in (0, 1], got {self.retention_fraction}"
            )
        if self.total_tokens < 1:
            raise ValueError("total token count must be >= 1")

    @property
    def n_visual_retained(self) -> int:
        return round_half_up(self.retention_fraction * self.n_visual_tokens_full)

    @property
    def total_tokens(self) -> int:
        return self.n_text_tokens + self.n_visual_retained


@dataclass(frozen=True)
class CostReport:
    retention_fraction: float
    total_tokens: int
    prefill_flops: int
    attn_score_flops: int
    weight_bytes: int
    kv_cache_bytes: int
    activation_bytes_peak: int
    attn_matrix_bytes: int
    prefill_time_s: float
    ratios: dict[str, float]
    notes: dict[str, object]


def _raw_costs(model: ModelConfig, t: int, alpha: int) -> dict[str, int | float]:
    d, h = model.d_model, model.n_heads
    attn_proj = 8 * t * d * d
    attn_score = 4 * t * t * d
    mlp = (6 if model.ffn_style == "gated" else 4) * t * d * model.d_ff
    flops = model.n_layers * (attn_proj + attn_score + mlp) + 2 * t * d * model.vocab_size

    weight_bytes = model.param_count * model.bytes_per_param
    kv_cache_bytes = 2 * model.n_layers * t * d * model.bytes_per_act
    attn_matrix_bytes = h * t * t * model.bytes_per_act
    activation_bytes = t * d * model.bytes_per_act * alpha + attn_matrix_bytes
    return {
        "prefill_flops": flops,
        "attn_score_flops": model.n_layers * attn_score,
        "weight_bytes": weight_bytes,
        "kv_cache_bytes": kv_cache_bytes,
        "activation_bytes_peak": activation_bytes,
        "attn_matrix_bytes": attn_matrix_bytes,
    }


def _time_s(costs: dict, hw: HardwareConfig) -> float:
    compute = costs["prefill_flops"] / hw.peak_flops
    traffic = costs["weight_bytes"] + costs["kv_cache_bytes"] + costs["activation_bytes_peak"]
    return max(compute, traffic / hw.mem_bandwidth)


def estimate(
    model: ModelConfig, hw: HardwareConfig, q: CostQuery, alpha: int = DEFAULT_ALPHA
) -> CostReport:
    """Cost report at the query's retention fraction, with ratios vs r=1."""
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    t = q.total_tokens
    costs = _raw_costs(model, t, alpha)
    time_s = _time_s(costs, hw)

    t_full = q.n_text_tokens + q.n_visual_tokens_full
    base = _raw_costs(model, t_full, alpha)
    base_time = _time_s(base, hw)
    ratios = {key: costs[key] / base[key] for key in costs}
    ratios["prefill_time_s"] = time_s / base_time

    return CostReport(
        retention_fraction=q.retention_fraction,
        total_tokens=t,
        prefill_flops=costs["prefill_flops"],
        attn_score_flops=costs["attn_score_flops"],
        weight_bytes=costs["weight_bytes"],
        kv_cache_bytes=costs["kv_cache_bytes"],
        activation_bytes_peak=costs["activation_bytes_peak"],
        attn_matrix_bytes=costs["attn_matrix_bytes"],
        prefill_time_s=time_s,
        ratios=ratios,
        notes={"alpha": alpha, "excluded": EXCLUDED_TERMS},
    )


def sweep(
    model: ModelConfig,
    hw: HardwareConfig,
    q_base: CostQuery,
    r_values,
    alpha: int = DEFAULT_ALPHA,
) -> list[CostReport]:
    """One report per retention fraction; every cost field is monotone in r."""
    reports = []
    for r in r_values:
        q = CostQuery(
            n_text_tokens=q_base.n_text_tokens,
            n_visual_tokens_full=q_base.n_visual_tokens_full,
            retention_fraction=float(r),
        )
        reports.append(estimate(model, hw, q, alpha=alpha))
    return reports


CSV_COLUMNS = (
    "r",
    "total_tokens",
    "prefill_flops",
    "attn_score_flops",
    "weight_bytes",
    "kv_cache_bytes",
    "activation_bytes_peak",
    "attn_matrix_bytes",
    "prefill_time_s",
    "flops_ratio",
    "weight_ratio",
    "kv_ratio",
    "act_ratio",
    "time_ratio",
)


def sweep_csv(reports: list[CostReport]) -> str:
    """Render a sweep as CSV suitable for plotting reduction curves."""
    lines = [",".join(CSV_COLUMNS)]
    for rep in reports:
        lines.append(
            ",".join(
                [
                    f"{rep.retention_fraction!r}",
                    str(rep.total_tokens),
                    str(rep.prefill_flops),
                    str(rep.attn_score_flops),
                    str(rep.weight_bytes),
                    str(rep.kv_cache_bytes),
                    str(rep.activation_bytes_peak),
                    str(rep.attn_matrix_bytes),
                    f"{rep.prefill_time_s!r}",
                    f"{rep.ratios['prefill_flops']!r}",
                    f"{rep.ratios['weight_bytes']!r}",
                    f"{rep.ratios['kv_cache_bytes']!r}",
                    f"{rep.ratios['activation_bytes_peak']!r}",
                    f"{rep.ratios['prefill_time_s']!r}",
                ]
            )
        )
    return "\n".join(lines) + "\n"


def model_config_from_json(path) -> ModelConfig:
    with open(Path(path), encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return ModelConfig(
            n_layers=int(raw["n_layers"]),
            d_model=int(raw["d_model"]),
            n_heads=int(raw["n_heads"]),
            d_head=int(raw["d_head"]),
            d_ff=int(raw["d_ff"]),
            ffn_style=str(raw["ffn_style"]),
            vocab_size=int(raw["vocab_size"]),
            bytes_per_param=int(raw.get("bytes_per_param", 2)),
            bytes_per_act=int(raw.get("bytes_per_act", 2)),
        )
    except KeyError as exc:
        raise ValueError(f"model config missing key {exc.args[0]!r}") from exc


def hardware_config_from_json(path) -> HardwareConfig:
    with open(Path(path), encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return HardwareConfig(
            peak_flops=float(raw["peak_flops"]),
            mem_bandwidth=float(raw["mem_bandwidth"]),
        )
    except KeyError as exc:
        raise ValueError(f"hardware config missing key {exc.args[0]!r}") from exc
