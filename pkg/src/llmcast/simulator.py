"""Analytical model builder and phase simulators.

A LayerGraph is the operator sequence of one decoder layer (norm, QKV
projections, rotary embedding, attention, output projection, norm, gated
MLP, residual adds) plus the embedding and LM-head stages. Simulators walk
it through prefill, chunked prefill and token-by-token decode, recording
per-operator deltas into a StatsDB.

Modeling notes (calibrated against the reference workload tables):
  * the LM head and sampling softmax run every pass (m = new tokens), with
    LM-head weights kept at the activation dtype;
  * the embedding stage is a per-token row gather with no dispatch call
    (the standalone embedding op models the printed worst-case full-table
    read; charging that per token would dwarf every reference decode
    memory figure);
  * prefill attention is full (non-causal) over new x total tokens, which
    is what reproduces the reference prefill totals.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from llmcast.config import ModelConfig, nbytes
from llmcast.derived import (
    AttentionSpec,
    Part,
    attention,
    hadamard_rotation,
    kv_bytes_per_token,
    mlp,
    rmsnorm,
    rope,
    softmax,
)
from llmcast.ops import Bytes, StatsDelta, ZERO_DELTA, elementwise, linear
from llmcast.stats import RunSummary, StatsDB, StatsRecord


@dataclass(frozen=True)
class KVState:
    """Cache occupancy: tokens held and bytes appended per token per layer."""

    past_len: int
    bytes_per_token_per_layer: Bytes

    def grown(self, tokens: int) -> "KVState":
        return KVState(self.past_len + tokens, self.bytes_per_token_per_layer)


class LayerGraph:
    """Deterministic operator graph for one model configuration."""

    def __init__(self, cfg: ModelConfig) -> None:
        self.cfg = cfg
        self.attention_spec = attention_spec_for(cfg)
        self._fixed_cache: dict[int, tuple[Part, ...]] = {}
        self._top_cache: dict[int, tuple[Part, ...]] = {}

    @property
    def num_layers(self) -> int:
        return self.cfg.num_decoder_layers

    @property
    def kv_bytes_per_token_per_layer(self) -> Bytes:
        return kv_bytes_per_token(self.attention_spec, self.cfg.dtype_in)

    @property
    def mode(self) -> str:
        return self.cfg.mode

    def initial_kv_state(self) -> KVState:
        return KVState(0, self.kv_bytes_per_token_per_layer)

    # -- per-layer items -------------------------------------------------

    def attention_items(self, new_seq: int, past_len: int) -> tuple[Part, ...]:
        cfg = self.cfg
        comp = attention(
            self.attention_spec,
            new_seq,
            past_len,
            dtype_act=cfg.dtype_in,
            dtype_wts=cfg.dtype_wts,
            grpsize=cfg.gemm_grpsize if cfg.weights_quantized else None,
            softmax_table=cfg.actfn_table_size,
            softmax_algo=cfg.actfn_algo,
            poly_degree=cfg.poly_degree,
            rope_table_size=cfg.rope_table_size,
        )
        return comp.parts

    def fixed_layer_items(self, new_seq: int) -> tuple[Part, ...]:
        """Layer items whose cost does not depend on cache length."""
        cached = self._fixed_cache.get(new_seq)
        if cached is not None:
            return cached
        cfg = self.cfg
        nb = nbytes(cfg.dtype_in)
        h = cfg.hidden_size
        fused = cfg.mode == "fused"
        lora = (
            dict(lora_rank=cfg.lora_rank, dtype_lora=cfg.dtype_lora)
            if cfg.lora_merge_policy == "inline"
            else {}
        )
        grp = cfg.gemm_grpsize if cfg.weights_quantized else None

        items: list[Part] = [("layer.input_norm", "norm", rmsnorm(new_seq, h, nb))]
        if not cfg.mla:
            for name in ("q_proj", "k_proj", "v_proj"):
                items.append(
                    (
                        f"layer.{name}",
                        "gemm",
                        linear(new_seq, h, cfg.num_kv_heads * cfg.head_dim if name != "q_proj" else h,
                               cfg.dtype_in, cfg.dtype_wts, bias=cfg.bias, grpsize=grp, **lora),
                    )
                )
            items.append(("layer.rope_q", "rope", rope(new_seq, cfg.num_heads, cfg.head_dim, cfg.rope_table_size, nb)))
            items.append(("layer.rope_k", "rope", rope(new_seq, cfg.num_kv_heads, cfg.head_dim, cfg.rope_table_size, nb)))
            attn_out_dim = h
        else:
            attn_out_dim = cfg.num_heads * cfg.v_head_dim
        if cfg.online_hadamard:
            items.append(
                ("layer.hadamard_o", "elementwise", hadamard_rotation(new_seq * attn_out_dim, attn_out_dim, nb))
            )
        items.append(
            ("layer.o_proj", "gemm",
             linear(new_seq, attn_out_dim, h, cfg.dtype_in, cfg.dtype_wts, bias=cfg.bias, grpsize=grp, **lora))
        )
        items.append(("layer.residual_1", "elementwise", elementwise(new_seq, h, nb, arity=2)))
        items.append(("layer.post_norm", "norm", rmsnorm(new_seq, h, nb)))
        if cfg.online_hadamard:
            items.append(
                ("layer.hadamard_down", "elementwise",
                 hadamard_rotation(new_seq * cfg.intermediate_size, cfg.intermediate_size, nb))
            )
        mlp_comp = mlp(
            new_seq,
            h,
            cfg.intermediate_size,
            dtype_act=cfg.dtype_in,
            dtype_wts=cfg.dtype_wts,
            grpsize=grp,
            actfn_algo=cfg.actfn_algo,
            actfn_table_size=cfg.actfn_table_size,
            poly_degree=cfg.poly_degree,
            fused=fused,
            bias=cfg.bias,
            **lora,
        )
        items.extend(("layer." + name, cls, d) for name, cls, d in mlp_comp.parts)
        items.append(("layer.residual_2", "elementwise", elementwise(new_seq, h, nb, arity=2)))
        result = tuple(items)
        self._fixed_cache[new_seq] = result
        return result

    def layer_items(self, new_seq: int, past_len: int) -> tuple[Part, ...]:
        fixed = self.fixed_layer_items(new_seq)
        attn = tuple(("layer." + name, cls, d) for name, cls, d in self.attention_items(new_seq, past_len))
        # Attention sits between the QKV/rope stage and the output projection.
        head = fixed[: self._attn_insert_index()]
        tail = fixed[self._attn_insert_index():]
        return head + attn + tail

    def _attn_insert_index(self) -> int:
        # After input_norm (+ qkv/rope for non-MLA); MLA brings its own
        # projections inside the attention composite.
        return 1 if self.cfg.mla else 6

    # -- top-level items -------------------------------------------------

    def top_items(self, new_seq: int) -> tuple[Part, ...]:
        cached = self._top_cache.get(new_seq)
        if cached is not None:
            return cached
        cfg = self.cfg
        nb = nbytes(cfg.dtype_in)
        h = cfg.hidden_size
        gather = StatsDelta(
            opcount=new_seq,
            mem_rd=Fraction(new_seq * h) * nb,
            mem_wr=Fraction(new_seq * h) * nb,
            dispatches=0,
        )
        lm_head = linear(new_seq, h, cfg.vocab_size, cfg.dtype_in, cfg.dtype_in, bias=False)
        sample = softmax(
            new_seq,
            cfg.vocab_size,
            cfg.actfn_table_size,
            nb,
            cfg.actfn_algo,
            cfg.poly_degree,
            fused=cfg.mode == "fused",
        )
        items: tuple[Part, ...] = (
            ("embed.gather", "embedding", gather),
            ("final_norm", "norm", rmsnorm(new_seq, h, nb)),
            ("lm_head", "gemm", lm_head),
        ) + tuple(("sample." + name, cls, d) for name, cls, d in sample.parts)
        self._top_cache[new_seq] = items
        return items

    # -- whole passes ----------------------------------------------------

    def pass_delta(self, new_seq: int, past_len: int) -> StatsDelta:
        """Aggregate delta of one full model pass."""
        total = ZERO_DELTA
        for _, _, d in self.layer_items(new_seq, past_len):
            total = total + d
        total = total.scaled(self.num_layers)
        for _, _, d in self.top_items(new_seq):
            total = total + d
        return total


def attention_spec_for(cfg: ModelConfig, mechanism: Optional[str] = None) -> AttentionSpec:
    """Build the attention spec implied by a model config, optionally
    overriding the mechanism (used for side-by-side comparisons)."""
    if mechanism is None:
        if cfg.mla:
            mechanism = "MLA"
        elif cfg.num_kv_heads == 1:
            mechanism = "MQA"
        elif cfg.num_kv_heads == cfg.num_heads:
            mechanism = "MHA"
        else:
            mechanism = "GQA"
    mla_dims = None
    if mechanism == "MLA":
        mla_dims = {
            "q_lora_rank": cfg.q_lora_rank or 128,
            "kv_lora_rank": cfg.kv_lora_rank or 128,
            "qk_nope_head_dim": cfg.qk_nope_head_dim or cfg.head_dim,
            "qk_rope_head_dim": cfg.qk_rope_head_dim or cfg.head_dim // 2,
            "v_head_dim": cfg.v_head_dim or cfg.head_dim,
        }
    num_kv = {"MHA": cfg.num_heads, "MQA": 1}.get(mechanism, cfg.num_kv_heads)
    if mechanism == "GQA" and num_kv == cfg.num_heads:
        num_kv = max(1, cfg.num_heads // 4)
    return AttentionSpec(
        mechanism=mechanism,
        num_heads=cfg.num_heads,
        num_kv_heads=num_kv,
        head_dim=cfg.head_dim,
        kv_qscheme=cfg.kv_qscheme,
        fused=cfg.mode == "fused",
        mla_dims=mla_dims,
    )


def build_model(cfg: ModelConfig) -> LayerGraph:
    """Build the analytical model graph for a configuration."""
    return LayerGraph(cfg)


def _record_pass(
    db: StatsDB,
    graph: LayerGraph,
    new_seq: int,
    past_len: int,
    phase: str,
) -> StatsDelta:
    """Record one model pass; layer items are recorded once, scaled by the
    (identical) layer count."""
    mode = graph.mode
    layers = graph.num_layers
    total = ZERO_DELTA
    for name, cls, delta in graph.layer_items(new_seq, past_len):
        scaled = delta.scaled(layers)
        db.record(StatsRecord(name, cls, phase, mode, scaled))
        total = total + scaled
    for name, cls, delta in graph.top_items(new_seq):
        db.record(StatsRecord(name, cls, phase, mode, delta))
        total = total + delta
    return total


def simulate_prefill(graph: LayerGraph, prompt_len: int, db: Optional[StatsDB] = None) -> RunSummary:
    """One pass over the whole prompt, populating the KV cache."""
    if prompt_len < 1:
        raise ValueError("prompt_len must be >= 1")
    db = db or StatsDB()
    _record_pass(db, graph, prompt_len, 0, "prefill")
    return db.summarize()


def simulate_chunked_prefill(
    graph: LayerGraph,
    prompt_len: int,
    chunk_size: int,
    db: Optional[StatsDB] = None,
) -> RunSummary:
    """Prefill in fixed-size chunks, rereading the accumulated cache; the
    last chunk runs at its true (possibly smaller) size."""
    if prompt_len < 1:
        raise ValueError("prompt_len must be >= 1")
    if not 1 <= chunk_size <= prompt_len:
        raise ValueError("chunk_size must satisfy 1 <= chunk_size <= prompt_len")
    db = db or StatsDB()
    past = 0
    index = 0
    while past < prompt_len:
        step = min(chunk_size, prompt_len - past)
        _record_pass(db, graph, step, past, f"chunk_{index:04d}")
        past += step
        index += 1
    return db.summarize()


def simulate_decode(
    graph: LayerGraph,
    past_len: int,
    n_tokens: int,
    db: Optional[StatsDB] = None,
) -> RunSummary:
    """Auto-regressive decode: one token per pass, cache growing each step.

    The returned summary carries a per-token timeline of aggregate deltas.
    """
    if past_len < 1:
        raise ValueError("past_len must be >= 1")
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    db = db or StatsDB()
    for t in range(n_tokens):
        delta = _record_pass(db, graph, 1, past_len + t, f"token_{t:05d}")
        db.record_token(delta)
    return db.summarize()


def operator_distribution(summary: RunSummary) -> dict[str, float]:
    """Percent of total compute ops per operator class (sums to ~100)."""
    total = summary.totals.opcount
    if total == 0:
        return {}
    return {cls: 100.0 * d.opcount / total for cls, d in sorted(summary.by_class.items())}
