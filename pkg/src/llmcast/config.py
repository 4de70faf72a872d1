"""Model, scenario and hardware configuration types.

The model configuration mirrors a JSON schema (one key per architectural
knob); presets for the Llama2-7B variant family are built on top of the
same parser/validator as user-supplied files, so there is no privileged
code path for built-ins.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from typing import Optional


class ConfigError(ValueError):
    """Raised when a configuration document violates the schema or an invariant."""


@dataclass(frozen=True)
class DataTypeSpec:
    """An element datatype and its storage cost in bytes (exact rational)."""

    name: str
    bytes_per_element: Fraction

    def __post_init__(self) -> None:
        if self.bytes_per_element <= 0:
            raise ConfigError(f"datatype {self.name!r}: bytes_per_element must be > 0")


# mx* formats store 1 byte per element; their shared per-group scale is
# charged inside the quantized-linear model, not here.
DATATYPES: dict[str, DataTypeSpec] = {
    "bf16": DataTypeSpec("bf16", Fraction(2)),
    "fp16": DataTypeSpec("fp16", Fraction(2)),
    "fp32": DataTypeSpec("fp32", Fraction(4)),
    "int16": DataTypeSpec("int16", Fraction(2)),
    "int8": DataTypeSpec("int8", Fraction(1)),
    "int4": DataTypeSpec("int4", Fraction(1, 2)),
    "mxfp8": DataTypeSpec("mxfp8", Fraction(1)),
    "mxint8": DataTypeSpec("mxint8", Fraction(1)),
}

# Weight dtypes that require dequantization inside the GEMM.
QUANTIZED_WEIGHT_DTYPES = {"int4", "int8", "mxfp8", "mxint8"}
# Quantized dtypes whose scales are stored per group of `gemm_grpsize`
# elements along k (int8 degenerates to one per-tensor scale per column).
PER_GROUP_WEIGHT_DTYPES = {"int4", "mxfp8", "mxint8"}


def nbytes(dtype_name: str) -> Fraction:
    """Bytes per element for a datatype name."""
    try:
        return DATATYPES[dtype_name].bytes_per_element
    except KeyError:
        raise ConfigError(f"unknown datatype name {dtype_name!r}") from None


_MODES = ("eager", "fused")
_ACTFN_ALGOS = ("pwl", "poly")
_QUANT_SCHEMES = ("none", "pergrp")
_KV_QSCHEMES = ("none", "int8", "int4")
_LORA_POLICIES = ("inline", "ahead_of_time", "none")

# Fields accepted in a model-config JSON document. Optional ones carry the
# documented default applied when the key is absent.
_REQUIRED_KEYS = {
    "mode",
    "dtype_in",
    "dtype_wts",
    "hidden_size",
    "vocab_size",
    "intermediate_size",
    "actfn_algo",
    "actfn_table_size",
    "gemm_quant_scheme",
    "gemm_grpsize",
    "bias",
    "rope_table_size",
    "num_heads",
    "num_kv_heads",
    "num_decoder_layers",
    "kv_qscheme",
    "max_position_embeddings",
    "mla",
}
_OPTIONAL_KEYS = {
    "q_lora_rank",
    "kv_lora_rank",
    "qk_nope_head_dim",
    "qk_rope_head_dim",
    "v_head_dim",
    "poly_degree",
    "lora_rank",
    "dtype_lora",
    "lora_merge_policy",
    "online_hadamard",
}


@dataclass(frozen=True)
class ModelConfig:
    """Full analytical description of a decoder-only LLM."""

    mode: str
    dtype_in: str
    dtype_wts: str
    hidden_size: int
    vocab_size: int
    intermediate_size: int
    num_heads: int
    num_kv_heads: int
    num_decoder_layers: int
    max_position_embeddings: int
    actfn_algo: str
    actfn_table_size: int
    gemm_quant_scheme: str
    gemm_grpsize: int
    bias: bool
    rope_table_size: int
    kv_qscheme: str
    mla: bool
    poly_degree: Optional[int] = None
    q_lora_rank: Optional[int] = None
    kv_lora_rank: Optional[int] = None
    qk_nope_head_dim: Optional[int] = None
    qk_rope_head_dim: Optional[int] = None
    v_head_dim: Optional[int] = None
    lora_rank: Optional[int] = None
    dtype_lora: str = "bf16"
    lora_merge_policy: str = "none"
    online_hadamard: bool = False

    def __post_init__(self) -> None:
        self.validate()

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    @property
    def weights_quantized(self) -> bool:
        return self.dtype_wts in QUANTIZED_WEIGHT_DTYPES

    def validate(self) -> None:
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.actfn_algo not in _ACTFN_ALGOS:
            raise ConfigError(f"actfn_algo must be one of {_ACTFN_ALGOS}, got {self.actfn_algo!r}")
        if self.gemm_quant_scheme not in _QUANT_SCHEMES:
            raise ConfigError(
                f"gemm_quant_scheme must be one of {_QUANT_SCHEMES}, got {self.gemm_quant_scheme!r}"
            )
        if self.kv_qscheme not in _KV_QSCHEMES:
            raise ConfigError(f"kv_qscheme must be one of {_KV_QSCHEMES}, got {self.kv_qscheme!r}")
        if self.lora_merge_policy not in _LORA_POLICIES:
            raise ConfigError(
                f"lora_merge_policy must be one of {_LORA_POLICIES}, got {self.lora_merge_policy!r}"
            )
        for name in ("dtype_in", "dtype_wts", "dtype_lora"):
            nbytes(getattr(self, name))
        for name in (
            "hidden_size",
            "vocab_size",
            "intermediate_size",
            "num_heads",
            "num_kv_heads",
            "num_decoder_layers",
            "max_position_embeddings",
            "actfn_table_size",
            "gemm_grpsize",
            "rope_table_size",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size ({self.hidden_size}) must be divisible by num_heads ({self.num_heads})"
            )
        if self.num_heads % self.num_kv_heads != 0:
            raise ConfigError(
                f"num_heads ({self.num_heads}) must be divisible by num_kv_heads ({self.num_kv_heads})"
            )
        if self.gemm_quant_scheme == "pergrp":
            if self.hidden_size % self.gemm_grpsize != 0:
                raise ConfigError(
                    f"gemm_grpsize ({self.gemm_grpsize}) must divide hidden_size ({self.hidden_size})"
                )
            if self.intermediate_size % self.gemm_grpsize != 0:
                raise ConfigError(
                    f"gemm_grpsize ({self.gemm_grpsize}) must divide intermediate_size "
                    f"({self.intermediate_size})"
                )
        if self.actfn_algo == "poly" and (self.poly_degree is None or self.poly_degree < 1):
            raise ConfigError("poly_degree must be a positive integer when actfn_algo is 'poly'")
        if self.mla:
            for name in (
                "q_lora_rank",
                "kv_lora_rank",
                "qk_nope_head_dim",
                "qk_rope_head_dim",
                "v_head_dim",
            ):
                value = getattr(self, name)
                if not isinstance(value, int) or value < 1:
                    raise ConfigError(f"{name} must be a positive integer when mla is true")
        if self.lora_merge_policy != "none" and (self.lora_rank is None or self.lora_rank < 1):
            raise ConfigError("lora_rank must be a positive integer when lora_merge_policy != 'none'")

    def to_json(self) -> str:
        """Serialize to a JSON document that re-parses to an identical value."""
        doc = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(doc, indent=2, sort_keys=True)


_TRAILING_COMMA = re.compile(r",(\s*[}\]])")


def parse_model_config(text: str) -> ModelConfig:
    """Parse and validate a JSON model-config document.

    Trailing commas before a closing brace/bracket are tolerated. Unknown
    keys are rejected by name. Defaults are applied only for the optional
    keys (lora_rank, lora_merge_policy, poly_degree, dtype_lora,
    online_hadamard and, when mla is false, the MLA dimension fields).
    """
    try:
        doc = json.loads(_TRAILING_COMMA.sub(r"\1", text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")

    known = _REQUIRED_KEYS | _OPTIONAL_KEYS
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = sorted(_REQUIRED_KEYS - set(doc))
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    return ModelConfig(**doc)


def _llama2_7b_base(**overrides) -> dict:
    base = {
        "mode": "eager",
        "dtype_in": "bf16",
        "dtype_wts": "bf16",
        "hidden_size": 4096,
        "vocab_size": 32000,
        "intermediate_size": 11008,
        "actfn_algo": "pwl",
        "actfn_table_size": 256,
        "gemm_quant_scheme": "none",
        "gemm_grpsize": 128,
        "bias": False,
        "rope_table_size": 4096,
        "num_heads": 32,
        "num_kv_heads": 32,
        "num_decoder_layers": 32,
        "kv_qscheme": "none",
        "max_position_embeddings": 4096,
        "mla": False,
    }
    base.update(overrides)
    return base


_INT4 = {"dtype_wts": "int4", "gemm_quant_scheme": "pergrp"}
_MLA_DIMS = {
    "mla": True,
    "q_lora_rank": 128,
    "kv_lora_rank": 128,
    "qk_nope_head_dim": 128,
    "qk_rope_head_dim": 64,
    "v_head_dim": 128,
}

_PRESETS: dict[str, dict] = {
    "bf16-bf16": _llama2_7b_base(),
    "bf16-int4": _llama2_7b_base(**_INT4),
    "bf16-int4-fused": _llama2_7b_base(mode="fused", **_INT4),
    "bf16-int4-kv4": _llama2_7b_base(mode="fused", kv_qscheme="int4", **_INT4),
    "bf16-int4-mla": _llama2_7b_base(mode="fused", **_INT4, **_MLA_DIMS),
    "bf16-int4-lora": _llama2_7b_base(
        mode="fused", lora_rank=16, dtype_lora="bf16", lora_merge_policy="inline", **_INT4
    ),
    "quarot-w4a4kv4": _llama2_7b_base(
        mode="fused", dtype_in="int8", kv_qscheme="int4", online_hadamard=True, **_INT4
    ),
    "fp16-fp16": _llama2_7b_base(dtype_in="fp16", dtype_wts="fp16"),
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def preset_variant(name: str) -> ModelConfig:
    """Return one of the bundled Llama2-7B variant configurations.

    Presets round-trip through the same JSON parser/validator as user
    configs.
    """
    try:
        doc = _PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown variant name {name!r}; expected one of {', '.join(PRESET_NAMES)}") from None
    return parse_model_config(json.dumps(doc))


@dataclass(frozen=True)
class HardwareSpec:
    """Peak hardware capabilities: compute, bandwidth and dispatch latency."""

    peak_tops: float  # TOPs/sec (tera-operations per second, 1e12 ops/s)
    peak_bw: float  # GB/sec (decimal, 1e9 bytes/s)
    dispatch_latency: float = 0.0  # seconds per dispatch call
    onchip_bytes: Optional[int] = None  # tiling threshold; None = 1 dispatch/op

    def __post_init__(self) -> None:
        if self.peak_tops <= 0:
            raise ConfigError("peak_tops must be > 0")
        if self.peak_bw <= 0:
            raise ConfigError("peak_bw must be > 0")
        if self.dispatch_latency < 0:
            raise ConfigError("dispatch_latency must be >= 0")
        if self.onchip_bytes is not None and self.onchip_bytes < 1:
            raise ConfigError("onchip_bytes must be a positive byte count when set")

    @property
    def ops_per_second(self) -> float:
        return self.peak_tops * 1e12

    @property
    def bytes_per_second(self) -> float:
        return self.peak_bw * 1e9


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 < value <= 1.0:
        raise ConfigError(f"{name} must be in (0, 1], got {value!r}")


@dataclass(frozen=True)
class EfficiencyProfile:
    """Achieved fraction of peak compute/bandwidth per operator class.

    Classes missing from a map fall back to the declared default of 1.0;
    `em_avg` is the scalar fallback used by the decode-time (TPOT) model.
    """

    ec: dict[str, float] = field(default_factory=dict)
    em: dict[str, float] = field(default_factory=dict)
    em_avg: float = 1.0

    def __post_init__(self) -> None:
        for cls, val in self.ec.items():
            _check_fraction(f"ec[{cls!r}]", val)
        for cls, val in self.em.items():
            _check_fraction(f"em[{cls!r}]", val)
        _check_fraction("em_avg", self.em_avg)

    def ec_for(self, op_class: str) -> float:
        return self.ec.get(op_class, 1.0)

    def em_for(self, op_class: str) -> float:
        return self.em.get(op_class, 1.0)

    @staticmethod
    def uniform(ec: float = 1.0, em: float = 1.0) -> "EfficiencyProfile":
        classes = ("gemm", "bmm", "softmax", "elementwise", "nonlinear", "embedding", "norm", "rope", "other")
        return EfficiencyProfile(
            ec={c: ec for c in classes}, em={c: em for c in classes}, em_avg=em
        )


_PHASES = ("prefill", "decode", "chunked_prefill", "timeline")


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario: phase plus sequence-length operating point."""

    phase: str
    prompt_len: int
    gen_len: int = 1
    chunk_size: Optional[int] = None

    def __post_init__(self) -> None:
        if self.phase not in _PHASES:
            raise ConfigError(f"phase must be one of {_PHASES}, got {self.phase!r}")
        if self.prompt_len < 1:
            raise ConfigError("prompt_len must be >= 1")
        if self.phase == "chunked_prefill":
            if self.chunk_size is None or not 1 <= self.chunk_size <= self.prompt_len:
                raise ConfigError("chunked_prefill requires 1 <= chunk_size <= prompt_len")
        if self.phase == "timeline" and self.gen_len < 1:
            raise ConfigError("timeline requires gen_len >= 1")


def parse_hardware_config(text: str) -> tuple[HardwareSpec, EfficiencyProfile]:
    """Parse a JSON document holding a hardware spec and efficiency profile.

    Schema: {"peak_tops": .., "peak_bw": .., "dispatch_latency": ..,
    "onchip_bytes": .., "ec": {class: frac}, "em": {class: frac},
    "em_avg": frac}. Only peak_tops and peak_bw are required.
    """
    try:
        doc = json.loads(_TRAILING_COMMA.sub(r"\1", text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"hardware config syntax error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("hardware config must be a JSON object")
    known = {"peak_tops", "peak_bw", "dispatch_latency", "onchip_bytes", "ec", "em", "em_avg"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown hardware config keys: {', '.join(unknown)}")
    for key in ("peak_tops", "peak_bw"):
        if key not in doc:
            raise ConfigError(f"missing required hardware config key: {key}")
    hw = HardwareSpec(
        peak_tops=float(doc["peak_tops"]),
        peak_bw=float(doc["peak_bw"]),
        dispatch_latency=float(doc.get("dispatch_latency", 0.0)),
        onchip_bytes=doc.get("onchip_bytes"),
    )
    eff = EfficiencyProfile(
        ec=dict(doc.get("ec", {})),
        em=dict(doc.get("em", {})),
        em_avg=float(doc.get("em_avg", 1.0)),
    )
    return hw, eff
