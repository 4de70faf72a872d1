"""Performance forecasting from workload metrics plus hardware specs.

Compute time divides per-class op counts by effective TOPS; memory time
divides per-class traffic by effective bandwidth; TTFT is the max of the
two. Decode TPOT is memory-dominated: read-side bytes over effective
bandwidth plus dispatch latency, with TPS its reciprocal. (The reciprocal
form is the dimensionally consistent one and reproduces the reference
decode forecasts exactly; see README.)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

from llmcast.config import EfficiencyProfile, HardwareSpec, ModelConfig
from llmcast.derived import lora_merge_total
from llmcast.ops import StatsDelta
from llmcast.stats import RunSummary


class ForecastError(ValueError):
    """Raised for degenerate forecasting inputs (e.g. zero-time TPOT)."""


@dataclass(frozen=True)
class ForecastResult:
    """Latency forecast for one workload on one hardware point."""

    t_c: float
    t_m: float
    ttft: float
    tpot: float
    tps: float
    t_lora: float = 0.0

    @property
    def tc_over_tm(self) -> float:
        return self.t_c / self.t_m if self.t_m > 0 else math.inf

    @property
    def compute_bound(self) -> bool:
        return self.tc_over_tm > 1.0


@dataclass(frozen=True)
class GridPoint:
    tops: float
    bw: float
    ec: float
    em: float
    result: ForecastResult


Workload = Union[RunSummary, StatsDelta, int, float]


def _class_deltas(workload: Workload) -> dict[str, StatsDelta]:
    if isinstance(workload, RunSummary):
        return workload.by_class
    if isinstance(workload, StatsDelta):
        return {"other": workload}
    raise TypeError(f"expected RunSummary or StatsDelta, got {type(workload).__name__}")


def time_compute(workload: Workload, hw: HardwareSpec, eff: EfficiencyProfile) -> float:
    """Seconds spent computing: per-class ops over effective peak ops/s,
    plus dispatch launch latency."""
    seconds = 0.0
    dispatches = 0
    for cls, delta in _class_deltas(workload).items():
        seconds += delta.opcount / (eff.ec_for(cls) * hw.ops_per_second)
        dispatches += delta.dispatches
    return seconds + dispatches * hw.dispatch_latency


def time_memory(workload: Workload, hw: HardwareSpec, eff: EfficiencyProfile) -> float:
    """Seconds spent moving bytes: per-class total traffic over effective
    bandwidth, plus dispatch launch latency."""
    seconds = 0.0
    dispatches = 0
    for cls, delta in _class_deltas(workload).items():
        seconds += float(Fraction(delta.total_bytes)) / (eff.em_for(cls) * hw.bytes_per_second)
        dispatches += delta.dispatches
    return seconds + dispatches * hw.dispatch_latency


def forecast_ttft(workload: Workload, hw: HardwareSpec, eff: EfficiencyProfile) -> ForecastResult:
    """Prefill latency: the slower of compute time and memory time."""
    t_c = time_compute(workload, hw, eff)
    t_m = time_memory(workload, hw, eff)
    ttft = max(t_c, t_m)
    return ForecastResult(t_c=t_c, t_m=t_m, ttft=ttft, tpot=ttft, tps=1.0 / ttft if ttft > 0 else math.inf)


def _read_bytes_and_dispatches(workload: Workload) -> tuple[float, int]:
    if isinstance(workload, (int, float)) and not isinstance(workload, bool):
        return float(workload), 0
    if isinstance(workload, StatsDelta):
        return float(Fraction(workload.read_bytes)), workload.dispatches
    if isinstance(workload, RunSummary):
        return float(Fraction(workload.totals.read_bytes)), workload.totals.dispatches
    raise TypeError(f"expected bytes, StatsDelta or RunSummary, got {type(workload).__name__}")


def forecast_tpot_tps(workload: Workload, hw: HardwareSpec, eff: EfficiencyProfile) -> ForecastResult:
    """Decode-phase forecast. TPOT = read bytes / (bandwidth * em_avg)
    + dispatch latency; TPS = 1 / TPOT.

    `workload` is a per-token delta, a run summary, or a raw byte count.
    """
    mem_bytes, dispatches = _read_bytes_and_dispatches(workload)
    tpot = mem_bytes / (hw.bytes_per_second * eff.em_avg) + dispatches * hw.dispatch_latency
    if tpot <= 0.0:
        raise ForecastError("TPOT is zero (empty workload and zero dispatch latency); TPS undefined")
    tps = 1.0 / tpot
    return ForecastResult(t_c=0.0, t_m=tpot, ttft=tpot, tpot=tpot, tps=tps)


def forecast_lora_update(cfg: ModelConfig, hw: HardwareSpec, eff: EfficiencyProfile) -> float:
    """One-time adapter merge latency: max of its compute and memory terms."""
    delta = lora_merge_total(cfg)
    if delta.opcount == 0:
        return 0.0
    t_c = delta.opcount / (eff.ec_for("gemm") * hw.ops_per_second)
    t_m = float(Fraction(delta.total_bytes)) / (eff.em_for("gemm") * hw.bytes_per_second)
    return max(t_c, t_m)


def efficiency_grid(
    workload: Workload,
    tops_axis: Sequence[float] = tuple(range(10, 101, 10)),
    bw_axis: Sequence[float] = tuple(range(10, 101, 10)),
    ec: float = 1.0,
    em: float = 1.0,
    dispatch_latency: float = 0.0,
) -> list[GridPoint]:
    """TTFT forecast over the cross product of hardware axes (row-major by
    tops, then bw), at fixed compute/memory efficiencies."""
    points: list[GridPoint] = []
    for tops in tops_axis:
        for bw in bw_axis:
            hw = HardwareSpec(peak_tops=tops, peak_bw=bw, dispatch_latency=dispatch_latency)
            eff_profile = EfficiencyProfile.uniform(ec=ec, em=em)
            points.append(GridPoint(tops, bw, ec, em, forecast_ttft(workload, hw, eff_profile)))
    return points


def efficiency_sweep(
    workload: Workload,
    tops: float,
    bw: float,
    ec_axis: Sequence[float],
    em_axis: Sequence[float],
    dispatch_latency: float = 0.0,
) -> list[GridPoint]:
    """Second grid mode: fixed hardware point, swept efficiencies
    (row-major by ec, then em)."""
    hw = HardwareSpec(peak_tops=tops, peak_bw=bw, dispatch_latency=dispatch_latency)
    points: list[GridPoint] = []
    for ec in ec_axis:
        for em in em_axis:
            eff_profile = EfficiencyProfile.uniform(ec=ec, em=em)
            points.append(GridPoint(tops, bw, ec, em, forecast_ttft(workload, hw, eff_profile)))
    return points


@dataclass(frozen=True)
class TilingRow:
    seq: int
    ideal_ops: int
    padded_ops: int
    efficiency: float
    running_avg: float


def bmm_tiling_efficiency(
    tile_sizes: Sequence[int],
    head_dim: int,
    heads: int,
    seq_range: Iterable[int],
) -> dict[int, list[TilingRow]]:
    """Decode-attention BMM efficiency when the growing sequence axis is
    padded to the tile grid.

    efficiency(s) = ideal ops / padded ops; the sawtooth peaks at exact
    tile multiples and the running average settles to an asymptote.
    """
    if head_dim < 1 or heads < 1:
        raise ValueError("head_dim and heads must be >= 1")
    seqs = list(seq_range)
    if not seqs:
        raise ValueError("seq_range must be non-empty")

    def step_ops(n: int) -> int:
        qk = 2 * heads * head_dim * n - heads * n
        pv = 2 * heads * n * head_dim - heads * head_dim
        return qk + pv

    out: dict[int, list[TilingRow]] = {}
    for tile in tile_sizes:
        if tile < 1:
            raise ValueError("tile sizes must be >= 1")
        rows: list[TilingRow] = []
        acc = 0.0
        for i, s in enumerate(seqs, start=1):
            padded_len = math.ceil(s / tile) * tile
            ideal = step_ops(s)
            padded = step_ops(padded_len)
            efficiency = ideal / padded
            acc += efficiency
            rows.append(TilingRow(s, ideal, padded, efficiency, acc / i))
        out[tile] = rows
    return out


@dataclass(frozen=True)
class TimelinePoint:
    token_index: int
    mem_rd_bytes: float
    tpot: float
    tps: float


@dataclass(frozen=True)
class TpsTimeline:
    points: tuple[TimelinePoint, ...]

    @property
    def first_tps(self) -> float:
        return self.points[0].tps

    @property
    def last_tps(self) -> float:
        return self.points[-1].tps

    @property
    def drop_pct(self) -> float:
        """Percent fall from first-token TPS to last-token TPS."""
        return 100.0 * (1.0 - self.last_tps / self.first_tps)


def decode_tps_timeline(summary: RunSummary, hw: HardwareSpec, eff: EfficiencyProfile) -> TpsTimeline:
    """Per-token TPS over a decode run's timeline."""
    if not summary.per_token:
        raise ForecastError("summary has no per-token timeline; run simulate_decode first")
    points = []
    for i, delta in enumerate(summary.per_token):
        result = forecast_tpot_tps(delta, hw, eff)
        points.append(
            TimelinePoint(
                token_index=i,
                mem_rd_bytes=float(Fraction(delta.read_bytes)),
                tpot=result.tpot,
                tps=result.tps,
            )
        )
    return TpsTimeline(tuple(points))
