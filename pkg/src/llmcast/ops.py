"""Foundational operator cost models.

Each function returns a StatsDelta holding compute operations, memory
read/write bytes, KV-cache bytes and dispatch calls for a single operator
invocation. No tensor values are ever computed. Byte counts are exact
rationals internally so that sub-byte datatypes (int4 = 0.5 B/element)
never accumulate float drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

from llmcast.config import PER_GROUP_WEIGHT_DTYPES, QUANTIZED_WEIGHT_DTYPES, nbytes

Bytes = Union[int, Fraction]


def _norm(value: Bytes) -> Bytes:
    """Collapse integral Fractions to plain ints."""
    if isinstance(value, Fraction) and value.denominator == 1:
        return int(value)
    return value


@dataclass(frozen=True)
class StatsDelta:
    """Additive per-operator workload counters."""

    opcount: int = 0
    mem_rd: Bytes = 0
    mem_wr: Bytes = 0
    kv_rd: Bytes = 0
    kv_wr: Bytes = 0
    dispatches: int = 0

    def __post_init__(self) -> None:
        for name in ("opcount", "mem_rd", "mem_wr", "kv_rd", "kv_wr", "dispatches"):
            if getattr(self, name) < 0:
                raise ValueError(f"StatsDelta.{name} must be >= 0")
            object.__setattr__(self, name, _norm(getattr(self, name)))

    def __add__(self, other: "StatsDelta") -> "StatsDelta":
        return StatsDelta(
            self.opcount + other.opcount,
            self.mem_rd + other.mem_rd,
            self.mem_wr + other.mem_wr,
            self.kv_rd + other.kv_rd,
            self.kv_wr + other.kv_wr,
            self.dispatches + other.dispatches,
        )

    def scaled(self, k: int) -> "StatsDelta":
        """Delta for k identical invocations (e.g. identical decoder layers)."""
        return StatsDelta(
            self.opcount * k,
            self.mem_rd * k,
            self.mem_wr * k,
            self.kv_rd * k,
            self.kv_wr * k,
            self.dispatches * k,
        )

    @property
    def total_bytes(self) -> Bytes:
        return _norm(self.mem_rd + self.mem_wr + self.kv_rd + self.kv_wr)

    @property
    def read_bytes(self) -> Bytes:
        """Read-side traffic (weights + activations + KV); drives the TPOT model."""
        return _norm(self.mem_rd + self.kv_rd)


ZERO_DELTA = StatsDelta()


def _dispatches(total_bytes: Bytes, onchip_bytes: Optional[int]) -> int:
    """1 dispatch per op, or ceil(bytes touched / on-chip capacity) when tiled."""
    if onchip_bytes is None:
        return 1
    return max(1, math.ceil(Fraction(total_bytes) / onchip_bytes))


def _require_positive(**dims: int) -> None:
    for name, value in dims.items():
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")


def linear(
    m: int,
    k: int,
    n: int,
    dtype_a: str = "bf16",
    dtype_b: str = "bf16",
    dtype_out: Optional[str] = None,
    bias: bool = False,
    grpsize: Optional[int] = None,
    lora_rank: Optional[int] = None,
    dtype_lora: str = "bf16",
    onchip_bytes: Optional[int] = None,
) -> StatsDelta:
    """GEMM of an (m, k) activation against (k, n) weights, plus optional
    bias, per-group weight dequantization and an inline LoRA adapter.

    opcount = 2mkn - mn; quantized weights add 2kn dequant ops and the
    per-group scale/zero reads; an inline LoRA adapter of rank r adds
    2krn + kn ops and the adapter reads.
    """
    _require_positive(m=m, k=k, n=n)
    dtype_out = dtype_out or dtype_a
    opcount = 2 * m * k * n - m * n
    mem_rd: Bytes = Fraction(m * k) * nbytes(dtype_a)
    mem_wr: Bytes = Fraction(m * n) * nbytes(dtype_out)
    param_rd: Bytes = Fraction(k * n) * nbytes(dtype_b)
    if bias:
        opcount += m * n
        param_rd += Fraction(n) * nbytes(dtype_a)
    if dtype_b in QUANTIZED_WEIGHT_DTYPES:
        opcount += 2 * k * n  # dequantize: shift + scale per weight
        if dtype_b in PER_GROUP_WEIGHT_DTYPES:
            if grpsize is None or grpsize < 1:
                raise ValueError(f"grpsize required for per-group quantized dtype {dtype_b!r}")
            if k % grpsize != 0:
                raise ValueError(f"grpsize ({grpsize}) must divide k ({k}) for {dtype_b!r} weights")
            groups = k // grpsize
        else:
            groups = 1  # per-tensor (one scale per output column)
        if dtype_b.startswith("mx"):
            param_rd += Fraction(groups * n)  # shared 1-byte scale per group
        else:
            param_rd += Fraction(groups * n) * nbytes(dtype_a)  # scales
            if dtype_b == "int4":
                param_rd += Fraction(groups * n) * nbytes(dtype_b)  # zero points
    if lora_rank is not None:
        if lora_rank < 1:
            raise ValueError("lora_rank must be >= 1 when present")
        param_rd += Fraction(k * lora_rank + lora_rank * n) * nbytes(dtype_lora)
        opcount += 2 * k * lora_rank * n  # adapter product A @ B
        opcount += k * n  # addition onto the base weight matrix
    mem_rd += param_rd
    return StatsDelta(
        opcount=opcount,
        mem_rd=mem_rd,
        mem_wr=mem_wr,
        dispatches=_dispatches(mem_rd + mem_wr, onchip_bytes),
    )


def quantize_dequantize(
    num_el: int,
    num_qparams: int,
    nbytes_full: Bytes,
    qbytes: Bytes,
    direction: str = "quantize",
    onchip_bytes: Optional[int] = None,
) -> StatsDelta:
    """Shift+scale conversion of num_el elements between a full-precision
    and a quantized representation (2 ops per element)."""
    _require_positive(num_el=num_el)
    if direction not in ("quantize", "dequantize"):
        raise ValueError(f"direction must be 'quantize' or 'dequantize', got {direction!r}")
    full_bytes = Fraction(num_el) * Fraction(nbytes_full)
    q_bytes = Fraction(num_el) * Fraction(qbytes) + Fraction(num_qparams) * Fraction(nbytes_full)
    if direction == "quantize":
        mem_rd, mem_wr = full_bytes, q_bytes
    else:
        mem_rd, mem_wr = q_bytes, full_bytes
    return StatsDelta(
        opcount=2 * num_el,
        mem_rd=mem_rd,
        mem_wr=mem_wr,
        dispatches=_dispatches(mem_rd + mem_wr, onchip_bytes),
    )


def bmm(
    b: int,
    m: int,
    k: int,
    n: int,
    nb: Bytes,
    read_a: bool = True,
    read_b: bool = True,
    onchip_bytes: Optional[int] = None,
) -> StatsDelta:
    """Batched matmul of (b, m, k) x (b, k, n); opcount = 2bmkn - bmn.

    `read_a`/`read_b` let callers suppress an operand read when that
    operand is sourced from KV-cache accounting or a fused producer.
    """
    _require_positive(b=b, m=m, k=k, n=n)
    nb = Fraction(nb)
    mem_rd: Bytes = 0
    if read_a:
        mem_rd += b * m * k * nb
    if read_b:
        mem_rd += b * k * n * nb
    mem_wr = b * m * n * nb
    return StatsDelta(
        opcount=2 * b * m * k * n - b * m * n,
        mem_rd=mem_rd,
        mem_wr=mem_wr,
        dispatches=_dispatches(mem_rd + mem_wr, onchip_bytes),
    )


def elementwise(
    m: int,
    n: int,
    nb: Bytes,
    arity: int = 2,
    onchip_bytes: Optional[int] = None,
) -> StatsDelta:
    """Pointwise op over an (m, n) tensor; arity 1 for unary scaling, 2 for
    add/mul of two operands."""
    _require_positive(m=m, n=n)
    if arity not in (1, 2):
        raise ValueError(f"arity must be 1 or 2, got {arity}")
    nb = Fraction(nb)
    mem_rd = arity * m * n * nb
    mem_wr = m * n * nb
    return StatsDelta(
        opcount=m * n,
        mem_rd=mem_rd,
        mem_wr=mem_wr,
        dispatches=_dispatches(mem_rd + mem_wr, onchip_bytes),
    )


def nonlinear_pwl(
    num_el: int,
    table_size: int,
    nb: Bytes,
    onchip_bytes: Optional[int] = None,
) -> StatsDelta:
    """Nonlinear function via piecewise-linear lookup: 2 ops per element
    plus one table read."""
    _require_positive(num_el=num_el, table_size=table_size)
    nb = Fraction(nb)
    mem_rd = (num_el + table_size) * nb
    mem_wr = num_el * nb
    return StatsDelta(
        opcount=2 * num_el,
        mem_rd=mem_rd,
        mem_wr=mem_wr,
        dispatches=_dispatches(mem_rd + mem_wr, onchip_bytes),
    )


def nonlinear_poly(
    num_el: int,
    degree: int,
    nb: Bytes,
    onchip_bytes: Optional[int] = None,
) -> StatsDelta:
    """Nonlinear function via degree-d polynomial (Horner form):
    (d(d+1)/2 + d) ops per element."""
    _require_positive(num_el=num_el, degree=degree)
    nb = Fraction(nb)
    mem_rd = (num_el + degree) * nb
    mem_wr = num_el * nb
    return StatsDelta(
        opcount=(degree * (degree + 1) // 2 + degree) * num_el,
        mem_rd=mem_rd,
        mem_wr=mem_wr,
        dispatches=_dispatches(mem_rd + mem_wr, onchip_bytes),
    )


def embedding(
    vocab_size: int,
    hidden_size: int,
    nb: Bytes,
    onchip_bytes: Optional[int] = None,
) -> StatsDelta:
    """Token-embedding lookup modeled as a full-table read (worst case):
    1 op and one hidden-size row written, per token."""
    _require_positive(vocab_size=vocab_size, hidden_size=hidden_size)
    nb = Fraction(nb)
    mem_rd = vocab_size * hidden_size * nb
    mem_wr = hidden_size * nb
    return StatsDelta(
        opcount=1,
        mem_rd=mem_rd,
        mem_wr=mem_wr,
        dispatches=_dispatches(mem_rd + mem_wr, onchip_bytes),
    )


@dataclass(frozen=True)
class OpShape:
    """Shape summary for a foundational op: GEMM/elementwise dims, batch,
    element count and quantization group size."""

    m: int = 1
    k: int = 1
    n: int = 1
    b: int = 1
    num_el: int = field(default=0)
    g: int = 1

    def __post_init__(self) -> None:
        _require_positive(m=self.m, k=self.k, n=self.n, b=self.b, g=self.g)
        if self.num_el == 0:
            object.__setattr__(self, "num_el", self.b * self.m * self.k * self.n)
