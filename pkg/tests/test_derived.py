"""Derived operator models: attention mechanisms, fusion, normalization,
rotary embedding, LoRA."""

from fractions import Fraction

import pytest

from llmcast.config import preset_variant
from llmcast.derived import (
    AttentionSpec,
    attention,
    hadamard_rotation,
    inv_sqrt,
    inverse,
    kv_bytes_per_token,
    lora_linear,
    lora_merge_breakdown,
    lora_merge_total,
    mlp,
    quantized_linear,
    rmsnorm,
    rope,
    softmax,
)
from llmcast.ops import linear

from _oracles import rmsnorm_chain_ops, softmax_chain_ops

MHA = AttentionSpec("MHA", 32, 32, 128)
MLA_DIMS = {
    "q_lora_rank": 128,
    "kv_lora_rank": 128,
    "qk_nope_head_dim": 128,
    "qk_rope_head_dim": 64,
    "v_head_dim": 128,
}


def spec_for(mechanism, kv_heads=None, fused=False, kv_qscheme="none"):
    kv = {"MHA": 32, "GQA": 8, "MQA": 1, "MLA": 32}[mechanism] if kv_heads is None else kv_heads
    return AttentionSpec(
        mechanism,
        32,
        kv,
        128,
        kv_qscheme=kv_qscheme,
        fused=fused,
        mla_dims=MLA_DIMS if mechanism == "MLA" else None,
    )


class TestInverse:
    def test_default_iterations(self):
        assert inverse(1).opcount == 4

    def test_many_rows(self):
        assert inverse(2048).opcount == 8_192

    def test_iteration_override(self):
        assert inverse(1, iters=6).opcount == 6
        assert inv_sqrt(10, iters=6).opcount == 60


class TestRope:
    def test_decode_step(self):
        assert rope(1, 32, 128, 4096).opcount == 3 * 32 * 128 == 12_288

    def test_prefill(self):
        assert rope(2048, 32, 128, 4096).opcount == 25_165_824

    def test_zero_seq_rejected(self):
        with pytest.raises(ValueError):
            rope(0, 32, 128, 4096)

    def test_table_residency_cap(self):
        small = rope(8192, 1, 64, 4096)
        # table slice stops growing past the configured residency
        assert small.mem_rd == (8192 * 64 + 4096 * 64) * 2


class TestRmsnorm:
    def test_tiny(self):
        assert rmsnorm(1, 4).opcount == 20

    def test_hidden_one(self):
        assert rmsnorm(1, 1).opcount == 4 + 4

    def test_matches_chain_oracle(self):
        for seq, hidden in ((1, 4), (3, 16), (2048, 4096)):
            assert rmsnorm(seq, hidden).opcount == rmsnorm_chain_ops(seq, hidden)


class TestSoftmax:
    def test_small_row(self):
        assert softmax(1, 2).delta.opcount == softmax_chain_ops(1, 2) == 12

    def test_degenerate_single_column(self):
        assert softmax(1, 1).delta.opcount == softmax_chain_ops(1, 1)

    def test_prefill_head_rows(self):
        rows, cols = 32 * 2048, 2048
        assert softmax(rows, cols).delta.opcount == 4 * rows * cols + 4 * rows

    def test_fused_same_ops_less_memory(self):
        eager = softmax(64, 512).delta
        fused = softmax(64, 512, fused=True).delta
        assert eager.opcount == fused.opcount
        assert fused.mem_rd < eager.mem_rd
        assert fused.mem_wr < eager.mem_wr


class TestMlp:
    def test_llama_dims_frozen(self):
        assert mlp(1, 4096, 11008).delta.opcount == 270_539_520

    def test_int4_adds_dequant(self):
        plain = mlp(1, 4096, 11008).delta.opcount
        quant = mlp(1, 4096, 11008, dtype_wts="int4", grpsize=128).delta.opcount
        assert quant - plain == 2 * (2 * 4096 * 11008 + 11008 * 4096)

    def test_minimal(self):
        assert mlp(1, 1, 1).delta.opcount > 0

    def test_fusion_invariance(self):
        eager = mlp(4, 256, 688).delta
        fused = mlp(4, 256, 688, fused=True).delta
        assert eager.opcount == fused.opcount
        assert fused.mem_rd + fused.mem_wr < eager.mem_rd + eager.mem_wr
        assert fused.dispatches < eager.dispatches

    def test_composite_is_sum_of_parts(self):
        comp = mlp(4, 256, 688)
        acc = None
        for _, _, d in comp.parts:
            acc = d if acc is None else acc + d
        assert acc == comp.delta


class TestQuantizedAndLoraLinear:
    def test_quantized_matches_foundational(self):
        assert quantized_linear(1, 4096, 4096, "bf16", "int4", grpsize=128) == linear(
            1, 4096, 4096, "bf16", "int4", grpsize=128
        )

    def test_inline_rank16(self):
        base = linear(1, 4096, 4096)
        inl = lora_linear(1, 4096, 4096, "bf16", "bf16", 16, merge_policy="inline")
        assert inl.opcount - base.opcount == 2 * 4096 * 16 * 4096 + 4096 * 4096 == 553_648_128

    def test_inline_gate_proj_rank128(self):
        base = linear(1, 4096, 11008)
        inl = lora_linear(1, 4096, 11008, "bf16", "bf16", 128, merge_policy="inline")
        assert inl.opcount - base.opcount == 11_587_813_376

    def test_ahead_of_time_is_plain(self):
        plain = linear(1, 4096, 4096)
        aot = lora_linear(1, 4096, 4096, "bf16", "bf16", 128, merge_policy="ahead_of_time")
        assert aot == plain


class TestLoraMergeTotal:
    def test_rank128_total_exact(self):
        cfg = preset_variant("bf16-int4-lora")
        assert lora_merge_total(cfg, 128).opcount == 1_670_809_387_008

    def test_rank16_total_exact(self):
        cfg = preset_variant("bf16-int4-lora")
        assert lora_merge_total(cfg, 16).opcount == 220_184_182_784

    def test_no_rank_is_zero(self):
        cfg = preset_variant("bf16-bf16")
        assert lora_merge_total(cfg).opcount == 0

    def test_breakdown_shapes(self):
        cfg = preset_variant("bf16-int4-lora")
        cells = lora_merge_breakdown(cfg, 128)
        assert cells["q_proj"] == 2 * 4096 * 128 * 4096 + 2 * 4096 * 4096
        assert cells["gate_proj"] == cells["up_proj"] == cells["down_proj"]


class TestAttention:
    def test_fused_equals_eager_compute(self):
        for mech in ("MHA", "GQA", "MQA", "MLA"):
            eager = attention(spec_for(mech), 7, 100).delta
            fused = attention(spec_for(mech, fused=True), 7, 100).delta
            assert eager.opcount == fused.opcount
            assert fused.mem_rd + fused.mem_wr < eager.mem_rd + eager.mem_wr
            assert fused.dispatches < eager.dispatches

    def test_trivial_single_head(self):
        spec = AttentionSpec("MHA", 1, 1, 1)
        comp = attention(spec, 1, 0)
        by_name = {name: d for name, _, d in comp.parts}
        assert by_name["attn.qk_bmm"].opcount == 1
        assert by_name["attn.pv_bmm"].opcount == 1

    def test_decode_step_frozen(self):
        comp = attention(MHA, 1, 32)
        assert comp.delta.opcount == 540_928
        assert comp.delta.read_bytes == 1_102_784

    def test_kv_write_and_read_symmetry(self):
        d = attention(MHA, 1, 32).delta
        assert d.kv_wr == kv_bytes_per_token(MHA)
        assert d.kv_rd == 33 * kv_bytes_per_token(MHA)

    def test_gqa_mqa_reduce_kv_not_compute(self):
        mha = attention(spec_for("MHA"), 1, 512).delta
        gqa = attention(spec_for("GQA"), 1, 512).delta
        mqa = attention(spec_for("MQA"), 1, 512).delta
        assert mha.opcount == gqa.opcount == mqa.opcount
        assert mqa.kv_rd < gqa.kv_rd < mha.kv_rd

    def test_mechanism_memory_ordering_eager(self):
        mem = {
            m: Fraction(attention(spec_for(m), 1, 8192).delta.read_bytes)
            for m in ("MHA", "GQA", "MQA", "MLA")
        }
        assert mem["MQA"] < mem["GQA"] < mem["MHA"]
        assert mem["MLA"] < mem["MHA"]

    def test_kv_quant_dominance(self):
        for fused in (False, True):
            mem = {
                q: Fraction(attention(spec_for("MHA", fused=fused, kv_qscheme=q), 1, 2048).delta.read_bytes)
                for q in ("none", "int8", "int4")
            }
            assert mem["int4"] < mem["int8"] < mem["none"]

    def test_kv_quant_adds_dequant_ops(self):
        plain = attention(spec_for("MHA"), 1, 100).delta.opcount
        quant = attention(spec_for("MHA", kv_qscheme="int4"), 1, 100).delta.opcount
        payload_read = 101 * 2 * 32 * 128
        payload_written = 2 * 32 * 128
        assert quant - plain == 2 * payload_read + 2 * payload_written

    def test_eager_composite_equals_sum_of_parts(self):
        comp = attention(MHA, 3, 64)
        total = comp.delta
        acc = None
        for _, _, d in comp.parts:
            acc = d if acc is None else acc + d
        assert acc == total

    def test_mla_cache_is_compressed_latent(self):
        spec = spec_for("MLA")
        assert spec.kv_elements_per_token == 128 + 64
        assert kv_bytes_per_token(spec) == (128 + 64) * 2

    def test_mla_requires_dims(self):
        with pytest.raises(ValueError):
            AttentionSpec("MLA", 32, 32, 128)

    def test_mqa_head_constraint(self):
        with pytest.raises(ValueError):
            AttentionSpec("MQA", 32, 4, 128)

    def test_past_len_zero_ok(self):
        assert attention(MHA, 4, 0).delta.opcount > 0


class TestHadamard:
    def test_op_count_is_fast_transform(self):
        d = hadamard_rotation(4096, 4096)
        assert d.opcount == 2 * 4096 * 12

    def test_non_power_of_two_rounds_up(self):
        d = hadamard_rotation(11008, 11008)
        assert d.opcount == 2 * 11008 * 14


class TestFusionGroups:
    def test_mlp_elided_bytes_match_traffic_delta(self):
        from llmcast.derived import mlp_fusion_group

        seq, hidden, inter = 4, 256, 688
        eager = mlp(seq, hidden, inter).delta
        fused = mlp(seq, hidden, inter, fused=True).delta
        group = mlp_fusion_group(seq, inter)
        saved = (eager.mem_rd + eager.mem_wr) - (fused.mem_rd + fused.mem_wr)
        assert saved == group.elided_bytes
        assert fused.dispatches == 1

    def test_attention_elision_accounting(self):
        from llmcast.derived import attention_fusion_group

        spec_eager = spec_for("MHA")
        spec_fused = spec_for("MHA", fused=True)
        new_seq, past = 3, 61
        total = past + new_seq
        eager = attention(spec_eager, new_seq, past).delta
        fused = attention(spec_fused, new_seq, past).delta
        group = attention_fusion_group(spec_eager, new_seq, total)
        # Fusion removes: the score-tensor round trips between members (the
        # group's interface bytes), the softmax-internal chain passes, and
        # the materialized K/V operand reads (re-sourced from the cache
        # accounting channel).
        scores_bytes = 32 * new_seq * total * 2
        sm = softmax(32 * new_seq, total).delta
        softmax_internal = sm.mem_rd + sm.mem_wr - 2 * scores_bytes
        operand_bytes = 2 * total * 32 * 128 * 2
        saved = (eager.mem_rd + eager.mem_wr) - (fused.mem_rd + fused.mem_wr)
        assert saved == group.elided_bytes + softmax_internal + operand_bytes
        assert fused.dispatches == 1

    def test_negative_elision_rejected(self):
        from llmcast.derived import FusionGroup

        with pytest.raises(ValueError):
            FusionGroup(members=("a", "b"), elided_bytes=-1)
