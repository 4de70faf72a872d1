"""Forecasting: time models, grids, tiling analysis, TPS timelines."""

import math

import pytest

from llmcast.config import EfficiencyProfile, HardwareSpec, preset_variant
from llmcast.forecast import (
    ForecastError,
    bmm_tiling_efficiency,
    decode_tps_timeline,
    efficiency_grid,
    efficiency_sweep,
    forecast_lora_update,
    forecast_tpot_tps,
    forecast_ttft,
    time_compute,
    time_memory,
)
from llmcast.ops import StatsDelta
from llmcast.simulator import build_model, simulate_decode, simulate_prefill

CPU = HardwareSpec(peak_tops=326.4e-3, peak_bw=240.0)
FULL_EFF = EfficiencyProfile.uniform(1.0, 1.0)


def bf16_prefill(prompt):
    return simulate_prefill(build_model(preset_variant("bf16-bf16")), prompt)


class TestTimeModels:
    def test_compute_time_is_ops_over_peak(self):
        delta = StatsDelta(opcount=326_400_000_000)
        assert time_compute(delta, CPU, FULL_EFF) == pytest.approx(1.0)

    def test_memory_time_is_bytes_over_bandwidth(self):
        delta = StatsDelta(mem_rd=120 * 10**9, mem_wr=120 * 10**9)
        assert time_memory(delta, CPU, FULL_EFF) == pytest.approx(1.0)

    def test_memory_time_reference_point(self):
        delta = StatsDelta(mem_rd=12_850_000_000)
        assert time_memory(delta, CPU, FULL_EFF) == pytest.approx(0.0535, rel=0.01)
        tenth = EfficiencyProfile.uniform(1.0, 0.1)
        assert time_memory(delta, CPU, tenth) == pytest.approx(0.535, rel=0.01)

    def test_dispatch_latency_added(self):
        hw = HardwareSpec(peak_tops=1.0, peak_bw=1.0, dispatch_latency=1e-3)
        delta = StatsDelta(opcount=0, dispatches=10)
        assert time_compute(delta, hw, FULL_EFF) == pytest.approx(0.01)

    def test_zero_op_summary_dispatch_only(self):
        hw = HardwareSpec(peak_tops=1.0, peak_bw=1.0, dispatch_latency=2e-6)
        delta = StatsDelta(dispatches=5)
        assert time_compute(delta, hw, FULL_EFF) == pytest.approx(1e-5)

    def test_per_class_efficiency(self):
        summary = bf16_prefill(128)
        eff = EfficiencyProfile(ec={"gemm": 0.5}, em={}, em_avg=1.0)
        slower = time_compute(summary, CPU, eff)
        baseline = time_compute(summary, CPU, FULL_EFF)
        gemm_ops = summary.by_class["gemm"].opcount
        assert slower - baseline == pytest.approx(gemm_ops / (0.5 * CPU.ops_per_second) - gemm_ops / CPU.ops_per_second)

    def test_scale_covariance(self):
        summary = bf16_prefill(64)
        t1 = time_compute(summary, HardwareSpec(peak_tops=10, peak_bw=100), FULL_EFF)
        t2 = time_compute(summary, HardwareSpec(peak_tops=20, peak_bw=100), FULL_EFF)
        assert t1 == pytest.approx(2 * t2)
        m1 = time_memory(summary, HardwareSpec(peak_tops=10, peak_bw=100), FULL_EFF)
        m2 = time_memory(summary, HardwareSpec(peak_tops=10, peak_bw=200), FULL_EFF)
        assert m1 == pytest.approx(2 * m2)


class TestTtft:
    def test_reference_row_2048(self):
        summary = bf16_prefill(2048)
        r100 = forecast_ttft(summary, CPU, FULL_EFF)
        r50 = forecast_ttft(summary, CPU, EfficiencyProfile.uniform(0.5, 1.0))
        assert r100.ttft == pytest.approx(89.74, rel=0.01)
        assert r50.ttft == pytest.approx(179.47, rel=0.01)

    def test_ttft_is_max(self):
        summary = bf16_prefill(64)
        r = forecast_ttft(summary, CPU, FULL_EFF)
        assert r.ttft == max(r.t_c, r.t_m)

    def test_tie_either(self):
        delta = StatsDelta(opcount=10**12, mem_rd=int(10**9 / 0.24 * 0.001))
        hw = HardwareSpec(peak_tops=1.0, peak_bw=1.0)
        r = forecast_ttft(delta, hw, FULL_EFF)
        assert r.ttft == max(r.t_c, r.t_m)

    def test_compute_bound_classification(self):
        r = forecast_ttft(StatsDelta(opcount=10**14, mem_rd=1), HardwareSpec(1.0, 1000.0), FULL_EFF)
        assert r.compute_bound and r.tc_over_tm > 1


class TestTpotTps:
    def test_reference_memory_values(self):
        hw = HardwareSpec(peak_tops=1.0, peak_bw=240.0)
        eff = EfficiencyProfile(em_avg=0.10)
        r = forecast_tpot_tps(12.85e9, hw, eff)
        assert r.tpot == pytest.approx(0.535, rel=0.01)
        assert r.tps == pytest.approx(1.87, rel=0.01)

    def test_igpu_point(self):
        hw = HardwareSpec(peak_tops=50.0, peak_bw=256.0)
        r = forecast_tpot_tps(4.71e9, hw, EfficiencyProfile(em_avg=0.50))
        assert r.tps == pytest.approx(27.2, rel=0.01)

    def test_tps_is_reciprocal(self):
        r = forecast_tpot_tps(1e9, HardwareSpec(1.0, 100.0), FULL_EFF)
        assert r.tps * r.tpot == pytest.approx(1.0, abs=1e-12)

    def test_zero_workload_rejected(self):
        with pytest.raises(ForecastError):
            forecast_tpot_tps(0.0, HardwareSpec(1.0, 100.0), FULL_EFF)

    def test_accepts_per_token_delta(self):
        run = simulate_decode(build_model(preset_variant("bf16-bf16")), 32, 1)
        r = forecast_tpot_tps(run.per_token[0], CPU, EfficiencyProfile(em_avg=0.10))
        assert r.tps == pytest.approx(1.81, rel=0.01)


class TestLoraForecast:
    def test_rank128_compute_term(self):
        cfg = preset_variant("bf16-int4-lora")
        import dataclasses

        cfg = dataclasses.replace(cfg, lora_rank=128)
        t = forecast_lora_update(cfg, CPU, FULL_EFF)
        # merge ops / peak compute dominates at full memory efficiency
        assert t == pytest.approx(1_670_809_387_008 / 326.4e9, rel=0.01)

    def test_policy_none_is_zero(self):
        assert forecast_lora_update(preset_variant("bf16-bf16"), CPU, FULL_EFF) == 0.0


class TestEfficiencyGrid:
    def test_default_grid_has_100_points(self):
        summary = bf16_prefill(64)
        points = efficiency_grid(summary)
        assert len(points) == 100
        # row-major ordering: tops varies slowest
        assert points[0].tops == 10 and points[0].bw == 10
        assert points[1].tops == 10 and points[1].bw == 20
        assert points[10].tops == 20

    def test_single_point_equals_forecast(self):
        summary = bf16_prefill(64)
        point = efficiency_grid(summary, [50.0], [30.0])[0]
        direct = forecast_ttft(summary, HardwareSpec(50.0, 30.0), FULL_EFF)
        assert point.result.ttft == direct.ttft

    def test_efficiency_sweep_mode(self):
        summary = bf16_prefill(64)
        points = efficiency_sweep(summary, 50.0, 30.0, [0.25, 0.5, 1.0], [0.25, 0.5, 1.0])
        assert len(points) == 9
        assert all(p.tops == 50.0 and p.bw == 30.0 for p in points)

    def test_kv_compression_shifts_balance(self):
        p4096_int4 = simulate_prefill(build_model(preset_variant("bf16-int4")), 4096)
        p4096_kv4 = simulate_prefill(build_model(preset_variant("bf16-int4-kv4")), 4096)
        pt_int4 = efficiency_grid(p4096_int4, [50.0], [50.0])[0]
        pt_kv4 = efficiency_grid(p4096_kv4, [50.0], [50.0])[0]
        assert pt_kv4.result.tc_over_tm > pt_int4.result.tc_over_tm

    def test_int4_prefill_predominantly_memory_bound(self):
        summary = simulate_prefill(build_model(preset_variant("bf16-int4")), 4096)
        points = efficiency_grid(summary)
        memory_bound = sum(1 for p in points if p.result.tc_over_tm < 1)
        assert memory_bound > 50

    def test_monotone_in_efficiency(self):
        summary = bf16_prefill(64)
        pts = efficiency_sweep(summary, 50.0, 30.0, [0.2, 0.4, 0.8], [1.0])
        assert pts[0].result.t_c >= pts[1].result.t_c >= pts[2].result.t_c


class TestTiling:
    def test_exact_multiple_full_efficiency(self):
        table = bmm_tiling_efficiency([64], 128, 32, range(64, 65))
        assert table[64][0].efficiency == pytest.approx(1.0)

    def test_one_past_tile_roughly_halves(self):
        tile = 64
        table = bmm_tiling_efficiency([tile], 128, 32, range(tile + 1, tile + 2))
        assert table[tile][0].efficiency == pytest.approx((tile + 1) / (2 * tile), rel=0.02)

    def test_sawtooth_peaks_at_multiples(self):
        table = bmm_tiling_efficiency([32], 128, 32, range(1, 129))
        rows = table[32]
        for row in rows:
            if row.seq % 32 == 0:
                assert row.efficiency == pytest.approx(1.0)
            else:
                assert row.efficiency < 1.0

    def test_running_average_reaches_asymptote(self):
        # The running average approaches its limit like log(s)/s: the gap
        # between windows keeps shrinking (numerically ~1.9% between the
        # 50-tile and 100-tile marks for tile 64).
        tile = 64
        table = bmm_tiling_efficiency([tile], 128, 32, range(1, 100 * tile + 1))
        rows = table[tile]
        quarter = rows[25 * tile - 1].running_avg
        mid = rows[50 * tile - 1].running_avg
        end = rows[-1].running_avg
        assert quarter < mid < end
        assert (end - mid) < (mid - quarter)
        assert end - mid < 0.02


class TestTpsTimeline:
    def test_kv4_drop_within_10pct(self):
        run = simulate_decode(build_model(preset_variant("bf16-int4-kv4")), 4096, 200)
        series = decode_tps_timeline(run, HardwareSpec(1.0, 240.0), EfficiencyProfile(em_avg=0.10))
        assert series.drop_pct <= 10.0

    def test_constant_memory_zero_drop(self):
        from llmcast.stats import StatsDB

        db = StatsDB()
        for _ in range(5):
            db.record_token(StatsDelta(opcount=1, mem_rd=1000))
        series = decode_tps_timeline(db.summarize(), HardwareSpec(1.0, 1.0), FULL_EFF)
        assert series.drop_pct == pytest.approx(0.0)

    def test_requires_timeline(self):
        summary = bf16_prefill(16)
        with pytest.raises(ForecastError):
            decode_tps_timeline(summary, CPU, FULL_EFF)

    def test_tps_declines_as_cache_grows(self):
        run = simulate_decode(build_model(preset_variant("bf16-bf16")), 128, 50)
        series = decode_tps_timeline(run, HardwareSpec(1.0, 240.0), EfficiencyProfile(em_avg=0.10))
        tps = [p.tps for p in series.points]
        assert all(b < a for a, b in zip(tps, tps[1:]))
