"""Derived operator cost models, composed from the foundational ones.

Derived ops return a Composite: an ordered list of (op_name, op_class,
StatsDelta) parts plus the summed delta. Fusion elides interface traffic
and dispatch calls between chained parts; compute operations are always
identical between eager and fused forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from llmcast.config import ModelConfig, nbytes
from llmcast.ops import (
    Bytes,
    StatsDelta,
    ZERO_DELTA,
    bmm,
    elementwise,
    linear,
    nonlinear_poly,
    nonlinear_pwl,
)

# Default iteration constant for inverse / inverse-sqrt approximations:
# two Newton iterations of one add + one mul each.
DEFAULT_INV_ITERS = 4

Part = tuple[str, str, StatsDelta]


@dataclass(frozen=True)
class Composite:
    """A derived operator broken into foundational parts."""

    parts: tuple[Part, ...]

    @property
    def delta(self) -> StatsDelta:
        total = ZERO_DELTA
        for _, _, d in self.parts:
            total = total + d
        return total

    def __add__(self, other: "Composite") -> "Composite":
        return Composite(self.parts + other.parts)


def single(name: str, op_class: str, delta: StatsDelta) -> Composite:
    return Composite(((name, op_class, delta),))


@dataclass(frozen=True)
class FusionGroup:
    """Chained operators whose interface tensors never round-trip memory."""

    members: tuple[str, ...]
    elided_bytes: Bytes

    def __post_init__(self) -> None:
        if self.elided_bytes < 0:
            raise ValueError("elided_bytes must be >= 0")


def quantized_linear(
    m: int,
    k: int,
    n: int,
    dtype_a: str,
    dtype_b: str,
    dtype_out: Optional[str] = None,
    bias: bool = False,
    grpsize: Optional[int] = None,
) -> StatsDelta:
    """Linear with quantized weights; delegates to the foundational GEMM
    which already models dequantization and scale/zero reads."""
    return linear(m, k, n, dtype_a, dtype_b, dtype_out, bias=bias, grpsize=grpsize)


def lora_linear(
    m: int,
    k: int,
    n: int,
    dtype_a: str,
    dtype_b: str,
    lora_rank: int,
    dtype_lora: str = "bf16",
    merge_policy: str = "inline",
    bias: bool = False,
    grpsize: Optional[int] = None,
) -> StatsDelta:
    """Linear with a LoRA adapter.

    With the inline policy every call pays the adapter product and merge;
    with ahead_of_time (or none) the per-call cost is a plain linear and
    the one-time cost is charged via lora_merge_total.
    """
    if merge_policy == "inline":
        if lora_rank is None or lora_rank < 1:
            raise ValueError("lora_rank must be >= 1 for inline merge policy")
        return linear(
            m, k, n, dtype_a, dtype_b, bias=bias, grpsize=grpsize,
            lora_rank=lora_rank, dtype_lora=dtype_lora,
        )
    return linear(m, k, n, dtype_a, dtype_b, bias=bias, grpsize=grpsize)


def inverse(num_el: int, nb: Bytes = 2, iters: int = DEFAULT_INV_ITERS) -> StatsDelta:
    """Reciprocal via iterative approximation: `iters` add/mul ops per
    element, memory as a unary elementwise pass."""
    if num_el < 1:
        raise ValueError("num_el must be >= 1")
    nb = Fraction(nb)
    return StatsDelta(
        opcount=iters * num_el,
        mem_rd=num_el * nb,
        mem_wr=num_el * nb,
        dispatches=1,
    )


def inv_sqrt(num_el: int, nb: Bytes = 2, iters: int = DEFAULT_INV_ITERS) -> StatsDelta:
    """Reciprocal square root, same iteration model as inverse."""
    return inverse(num_el, nb, iters)


def rope(
    seq: int,
    heads: int,
    head_dim: int,
    rope_table_size: int,
    nb: Bytes = 2,
) -> StatsDelta:
    """Rotary position embedding, rotate-half form: two muls and one add
    per element, reading a cos/sin table slice capped by table residency."""
    if seq < 1:
        raise ValueError("seq must be >= 1")
    if heads < 1 or head_dim < 1 or rope_table_size < 1:
        raise ValueError("heads, head_dim and rope_table_size must be >= 1")
    nb = Fraction(nb)
    num_el = seq * heads * head_dim
    table_slice = min(seq, rope_table_size) * head_dim
    return StatsDelta(
        opcount=3 * num_el,
        mem_rd=(num_el + table_slice) * nb,
        mem_wr=num_el * nb,
        dispatches=1,
    )


def rmsnorm(seq: int, hidden: int, nb: Bytes = 2, iters: int = DEFAULT_INV_ITERS) -> StatsDelta:
    """Root-mean-square norm: 3 ops/element body, one inverse-sqrt per row
    and one weight multiply per element."""
    if seq < 1 or hidden < 1:
        raise ValueError("seq and hidden must be >= 1")
    nb = Fraction(nb)
    num_el = seq * hidden
    return StatsDelta(
        opcount=3 * num_el + iters * seq + num_el,
        mem_rd=(num_el + hidden) * nb,
        mem_wr=num_el * nb,
        dispatches=1,
    )


def softmax(
    rows: int,
    cols: int,
    table_size: int = 256,
    nb: Bytes = 2,
    algo: str = "pwl",
    poly_degree: Optional[int] = None,
    iters: int = DEFAULT_INV_ITERS,
    fused: bool = False,
) -> Composite:
    """Row softmax: exponential (nonlinear approx), per-row sum, per-row
    inverse and a final scale multiply.

    Eager memory follows the elementwise chain; fused keeps one input read
    and one output write.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    num_el = rows * cols
    if algo == "pwl":
        nl = nonlinear_pwl(num_el, table_size, nb)
    elif algo == "poly":
        if poly_degree is None:
            raise ValueError("poly_degree required for poly softmax")
        nl = nonlinear_poly(num_el, poly_degree, nb)
    else:
        raise ValueError(f"unknown softmax algo {algo!r}")
    sum_adds = elementwise(rows, cols, nb, arity=1)
    inv = inverse(rows, nb, iters)
    scale_muls = elementwise(rows, cols, nb, arity=2)
    opcount = nl.opcount + sum_adds.opcount + inv.opcount + scale_muls.opcount
    if fused:
        nbf = Fraction(nb)
        delta = StatsDelta(
            opcount=opcount,
            mem_rd=(num_el + table_size) * nbf,
            mem_wr=num_el * nbf,
            dispatches=1,
        )
        return single("softmax", "softmax", delta)
    eager = nl + sum_adds + inv + scale_muls
    delta = StatsDelta(
        opcount=opcount,
        mem_rd=eager.mem_rd,
        mem_wr=eager.mem_wr,
        dispatches=1,
    )
    return single("softmax", "softmax", delta)


def mlp(
    seq: int,
    hidden: int,
    intermediate: int,
    dtype_act: str = "bf16",
    dtype_wts: str = "bf16",
    grpsize: Optional[int] = None,
    actfn_algo: str = "pwl",
    actfn_table_size: int = 256,
    poly_degree: Optional[int] = None,
    fused: bool = False,
    bias: bool = False,
    lora_rank: Optional[int] = None,
    dtype_lora: str = "bf16",
) -> Composite:
    """Gated MLP: gate/up projections, activation, elementwise gate
    multiply and down projection."""
    nb = nbytes(dtype_act)
    lora = dict(lora_rank=lora_rank, dtype_lora=dtype_lora) if lora_rank else {}
    gate = linear(seq, hidden, intermediate, dtype_act, dtype_wts, bias=bias, grpsize=grpsize, **lora)
    up = linear(seq, hidden, intermediate, dtype_act, dtype_wts, bias=bias, grpsize=grpsize, **lora)
    num_el = seq * intermediate
    if actfn_algo == "pwl":
        act = nonlinear_pwl(num_el, actfn_table_size, nb)
    else:
        act = nonlinear_poly(num_el, poly_degree or 2, nb)
    mul = elementwise(seq, intermediate, nb, arity=2)
    down = linear(seq, intermediate, hidden, dtype_act, dtype_wts, bias=bias, grpsize=grpsize, **lora)
    parts: list[Part] = [
        ("mlp.gate_proj", "gemm", gate),
        ("mlp.up_proj", "gemm", up),
        ("mlp.act_fn", "nonlinear", act),
        ("mlp.gate_mul", "elementwise", mul),
        ("mlp.down_proj", "gemm", down),
    ]
    if not fused:
        return Composite(tuple(parts))
    # Fused: gate_out, up_out, act_out and mul_out never round-trip memory.
    elide_rd = 4 * num_el * nb  # act<-gate, mul<-act, mul<-up, down<-mul
    elide_wr = 4 * num_el * nb  # gate, up, act, mul outputs
    total = Composite(tuple(parts)).delta
    fused_delta = StatsDelta(
        opcount=total.opcount,
        mem_rd=total.mem_rd - elide_rd,
        mem_wr=total.mem_wr - elide_wr,
        dispatches=1,
    )
    return single("mlp", "gemm", fused_delta)


def mlp_fusion_group(seq: int, intermediate: int, dtype_act: str = "bf16") -> FusionGroup:
    """Interface bytes elided by fusing the MLP chain."""
    nb = nbytes(dtype_act)
    return FusionGroup(
        members=("mlp.gate_proj", "mlp.up_proj", "mlp.act_fn", "mlp.gate_mul", "mlp.down_proj"),
        elided_bytes=8 * seq * intermediate * nb,
    )


_MECHANISMS = ("MHA", "GQA", "MQA", "MLA")
_KV_QBYTES = {"none": None, "int8": Fraction(1), "int4": Fraction(1, 2)}


@dataclass(frozen=True)
class AttentionSpec:
    """Shape and mode of one attention block."""

    mechanism: str
    num_heads: int
    num_kv_heads: int
    head_dim: int
    kv_qscheme: str = "none"
    fused: bool = False
    mla_dims: Optional[dict] = None

    def __post_init__(self) -> None:
        if self.mechanism not in _MECHANISMS:
            raise ValueError(f"mechanism must be one of {_MECHANISMS}, got {self.mechanism!r}")
        if self.kv_qscheme not in _KV_QBYTES:
            raise ValueError(f"kv_qscheme must be one of {tuple(_KV_QBYTES)}, got {self.kv_qscheme!r}")
        if self.num_heads < 1 or self.num_kv_heads < 1 or self.head_dim < 1:
            raise ValueError("num_heads, num_kv_heads and head_dim must be >= 1")
        if self.num_heads % self.num_kv_heads != 0:
            raise ValueError("num_heads must be divisible by num_kv_heads")
        if self.mechanism == "MQA" and self.num_kv_heads != 1:
            raise ValueError("MQA requires num_kv_heads == 1")
        if self.mechanism == "MHA" and self.num_kv_heads != self.num_heads:
            raise ValueError("MHA requires num_kv_heads == num_heads")
        if self.mechanism == "MLA" and not self.mla_dims:
            raise ValueError("MLA requires mla_dims")
        if self.mechanism != "MLA" and self.mla_dims:
            raise ValueError("mla_dims only valid for MLA")
        if self.mla_dims:
            for key in ("q_lora_rank", "kv_lora_rank", "qk_nope_head_dim", "qk_rope_head_dim", "v_head_dim"):
                if key not in self.mla_dims or self.mla_dims[key] < 1:
                    raise ValueError(f"mla_dims missing positive {key}")

    @property
    def kv_elements_per_token(self) -> int:
        """Cached elements per token per layer (K and V, or the MLA latent)."""
        if self.mechanism == "MLA":
            return self.mla_dims["kv_lora_rank"] + self.mla_dims["qk_rope_head_dim"]
        return 2 * self.num_kv_heads * self.head_dim

    @property
    def kv_tensors_heads(self) -> int:
        """(tensors x heads) carrying one scale+zero pair per token when quantized."""
        if self.mechanism == "MLA":
            return 1
        return 2 * self.num_kv_heads


def kv_bytes_per_token(spec: AttentionSpec, dtype_act: str = "bf16") -> Bytes:
    """Cache bytes appended per token per layer, including quantization
    scale/zero overhead when the cache is compressed."""
    nb = nbytes(dtype_act)
    qbytes = _KV_QBYTES[spec.kv_qscheme]
    payload = spec.kv_elements_per_token
    if qbytes is None:
        return payload * nb
    return payload * qbytes + spec.kv_tensors_heads * 2 * nb


def attention(
    spec: AttentionSpec,
    new_seq: int,
    past_len: int,
    dtype_act: str = "bf16",
    dtype_wts: Optional[str] = None,
    grpsize: Optional[int] = None,
    softmax_table: int = 256,
    softmax_algo: str = "pwl",
    poly_degree: Optional[int] = None,
    rope_table_size: int = 4096,
) -> Composite:
    """Attention over past_len cached tokens plus new_seq fresh ones.

    Eager mode materializes the K/V operands read by the two batched
    matmuls (counted in mem_rd) on top of the KV-cache traffic (kv_rd /
    kv_wr); fused mode streams K/V straight from the cache and elides the
    score-tensor round trips. GQA/MQA shrink KV traffic only; the batched
    matmuls broadcast across head groups so compute is unchanged. MLA adds
    its low-rank projections, norms and rotary parts, caches a compressed
    latent per token and re-expands it online.
    """
    if new_seq < 1:
        raise ValueError("new_seq must be >= 1")
    if past_len < 0:
        raise ValueError("past_len must be >= 0")
    total_len = past_len + new_seq
    nb = nbytes(dtype_act)
    dtype_wts = dtype_wts or dtype_act
    heads = spec.num_heads

    if spec.mechanism == "MLA":
        dims = spec.mla_dims
        dh_qk = dims["qk_nope_head_dim"] + dims["qk_rope_head_dim"]
        dh_v = dims["v_head_dim"]
    else:
        dh_qk = dh_v = spec.head_dim

    per_token_bytes = kv_bytes_per_token(spec, dtype_act)
    kv_rd_total = total_len * per_token_bytes
    kv_wr_total = new_seq * per_token_bytes
    # Bytes the matmul operands occupy when materialized from the cache
    # (eager path); split between the two matmuls.
    if spec.mechanism == "MLA":
        k_operand = Fraction(total_len * heads * dh_qk) * nb
        v_operand = Fraction(total_len * heads * dh_v) * nb
    else:
        half = Fraction(total_len * spec.num_kv_heads * spec.head_dim) * nb
        k_operand = v_operand = half

    parts: list[Part] = []

    if spec.mechanism == "MLA":
        parts.extend(_mla_projections(spec, new_seq, total_len, dtype_act, dtype_wts, grpsize, rope_table_size))

    qk = bmm(heads, new_seq, dh_qk, total_len, nb, read_b=False)
    scale = elementwise(heads * new_seq, total_len, nb, arity=1)
    sm = softmax(heads * new_seq, total_len, softmax_table, nb, softmax_algo, poly_degree)
    pv = bmm(heads, new_seq, total_len, dh_v, nb, read_b=False)

    qbytes = _KV_QBYTES[spec.kv_qscheme]
    quant_items: list[Part] = []
    if qbytes is not None:
        payload_read = total_len * spec.kv_elements_per_token
        payload_written = new_seq * spec.kv_elements_per_token
        quant_items.append(
            ("attn.kv_dequant", "elementwise", StatsDelta(opcount=2 * payload_read))
        )
        quant_items.append(
            ("attn.kv_quant", "elementwise", StatsDelta(opcount=2 * payload_written))
        )

    if not spec.fused:
        # Cache accounting splits evenly between the two matmuls (K on the
        # score matmul, V on the value matmul).
        kv_rd_half = Fraction(kv_rd_total) / 2
        kv_wr_half = Fraction(kv_wr_total) / 2
        qk_item = StatsDelta(
            opcount=qk.opcount,
            mem_rd=qk.mem_rd + k_operand,
            mem_wr=qk.mem_wr,
            kv_rd=kv_rd_half,
            kv_wr=kv_wr_half,
            dispatches=1,
        )
        pv_item = StatsDelta(
            opcount=pv.opcount,
            mem_rd=pv.mem_rd + v_operand,
            mem_wr=pv.mem_wr,
            kv_rd=kv_rd_half,
            kv_wr=kv_wr_half,
            dispatches=1,
        )
        parts.append(("attn.qk_bmm", "bmm", qk_item))
        parts.append(("attn.scale", "elementwise", scale))
        parts.extend(sm.parts)
        parts.append(("attn.pv_bmm", "bmm", pv_item))
        parts.extend(quant_items)
        return Composite(tuple(parts))

    core_ops = qk.opcount + scale.opcount + sm.delta.opcount + pv.opcount
    fused_core = StatsDelta(
        opcount=core_ops,
        mem_rd=Fraction(heads * new_seq * dh_qk) * nb,  # queries
        mem_wr=Fraction(heads * new_seq * dh_v) * nb,  # attention output
        kv_rd=kv_rd_total,
        kv_wr=kv_wr_total,
        dispatches=1,
    )
    parts.append(("attn.core", "bmm", fused_core))
    parts.extend(quant_items)
    return Composite(tuple(parts))


def _mla_projections(
    spec: AttentionSpec,
    new_seq: int,
    total_len: int,
    dtype_act: str,
    dtype_wts: str,
    grpsize: Optional[int],
    rope_table_size: int,
) -> list[Part]:
    """Low-rank query/KV projections, norms, rotary parts and the online
    re-expansion of cached latents for MLA."""
    dims = spec.mla_dims
    heads = spec.num_heads
    hidden = heads * spec.head_dim
    r_q = dims["q_lora_rank"]
    r_kv = dims["kv_lora_rank"]
    d_nope = dims["qk_nope_head_dim"]
    d_rope = dims["qk_rope_head_dim"]
    d_v = dims["v_head_dim"]
    nb = nbytes(dtype_act)

    q_a = linear(new_seq, hidden, r_q, dtype_act, dtype_wts, grpsize=grpsize)
    q_norm = rmsnorm(new_seq, r_q, nb)
    q_b = linear(new_seq, r_q, heads * (d_nope + d_rope), dtype_act, dtype_wts, grpsize=grpsize)
    kv_a = linear(new_seq, hidden, r_kv + d_rope, dtype_act, dtype_wts, grpsize=grpsize)
    kv_norm = rmsnorm(new_seq, r_kv, nb)
    rope_q = rope(new_seq, heads, d_rope, rope_table_size, nb)
    rope_k = rope(new_seq, 1, d_rope, rope_table_size, nb)
    # Online expansion multiplies the cached latents by the KV up-projection
    # every pass; the expanded tensors feed the matmuls directly (never
    # materialized), so only the up-projection weights are re-read.
    expand_ops = 2 * total_len * r_kv * heads * (d_nope + d_v) - total_len * heads * (d_nope + d_v)
    expand = StatsDelta(
        opcount=expand_ops,
        mem_rd=Fraction(r_kv * heads * (d_nope + d_v)) * nbytes(dtype_wts),
        dispatches=1,
    )
    return [
        ("mla.q_a_proj", "gemm", q_a),
        ("mla.q_norm", "norm", q_norm),
        ("mla.q_b_proj", "gemm", q_b),
        ("mla.kv_a_proj", "gemm", kv_a),
        ("mla.kv_norm", "norm", kv_norm),
        ("mla.rope_q", "rope", rope_q),
        ("mla.rope_k", "rope", rope_k),
        ("mla.kv_b_expand", "gemm", expand),
    ]


def attention_fusion_group(spec: AttentionSpec, new_seq: int, total_len: int, dtype_act: str = "bf16") -> FusionGroup:
    """Score-tensor interface bytes elided by fusing the attention core."""
    nb = nbytes(dtype_act)
    scores = spec.num_heads * new_seq * total_len * nb
    # Three interfaces round-trip eagerly: scores->scale, scale->softmax,
    # softmax->weights for the value matmul.
    return FusionGroup(
        members=("attn.qk_bmm", "attn.scale", "softmax", "attn.pv_bmm"),
        elided_bytes=6 * scores,
    )


def hadamard_rotation(num_el: int, width: int, nb: Bytes = 2) -> StatsDelta:
    """Online fast Hadamard rotation over rows of `width` elements:
    2*num_el*log2(width) add/sub ops."""
    if num_el < 1 or width < 1:
        raise ValueError("num_el and width must be >= 1")
    nb = Fraction(nb)
    stages = max(1, math.ceil(math.log2(width)))
    return StatsDelta(
        opcount=2 * num_el * stages,
        mem_rd=num_el * nb,
        mem_wr=num_el * nb,
        dispatches=1,
    )


# Projection shapes (k, n) of the seven weight matrices in one decoder layer.
def projection_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    h, inter = cfg.hidden_size, cfg.intermediate_size
    return {
        "q_proj": (h, h),
        "k_proj": (h, h),
        "v_proj": (h, h),
        "o_proj": (h, h),
        "gate_proj": (h, inter),
        "up_proj": (h, inter),
        "down_proj": (inter, h),
    }


def lora_merge_breakdown(cfg: ModelConfig, lora_rank: Optional[int] = None) -> dict[str, int]:
    """Merge ops per projection for ONE layer: adapter product plus the
    update applied to the base weights (2krn + 2kn)."""
    r = lora_rank if lora_rank is not None else cfg.lora_rank
    if r is None or r < 1:
        return {name: 0 for name in projection_shapes(cfg)}
    return {
        name: 2 * k * r * n + 2 * k * n
        for name, (k, n) in projection_shapes(cfg).items()
    }


def lora_merge_total(cfg: ModelConfig, lora_rank: Optional[int] = None) -> StatsDelta:
    """One-time cost of merging LoRA adapters into all projection weights
    across every decoder layer."""
    r = lora_rank if lora_rank is not None else cfg.lora_rank
    if r is None or r < 1:
        return ZERO_DELTA
    layers = cfg.num_decoder_layers
    ops = sum(lora_merge_breakdown(cfg, r).values()) * layers
    nb_lora = nbytes(cfg.dtype_lora)
    nb_wts = nbytes(cfg.dtype_wts)
    adapter_rd = sum(Fraction(k * r + r * n) * nb_lora for k, n in projection_shapes(cfg).values())
    base_bytes = sum(Fraction(k * n) * nb_wts for k, n in projection_shapes(cfg).values())
    return StatsDelta(
        opcount=ops,
        mem_rd=(adapter_rd + base_bytes) * layers,
        mem_wr=base_bytes * layers,
        dispatches=7 * layers,
    )
