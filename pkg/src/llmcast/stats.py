"""Statistics database: append-only per-operator records with exact
aggregation, plus JSON/CSV export.

Counters accumulate as ints/exact rationals; unit renderings (GOPs, TOPs,
GB) are presentation-layer divisions. GB is decimal (1e9 bytes); KV-cache
sizes are additionally exposed in binary GiB, the convention the reference
workload tables use for cache capacity.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Union

from llmcast.ops import Bytes, StatsDelta, ZERO_DELTA

OP_CLASSES = (
    "gemm",
    "bmm",
    "softmax",
    "elementwise",
    "nonlinear",
    "embedding",
    "norm",
    "rope",
    "other",
)


@dataclass(frozen=True)
class StatsRecord:
    """One accumulation event for a named operator."""

    op_name: str
    op_class: str
    phase: str
    mode: str
    delta: StatsDelta

    def __post_init__(self) -> None:
        if self.op_class not in OP_CLASSES:
            raise ValueError(f"op_class must be one of {OP_CLASSES}, got {self.op_class!r}")
        if self.mode not in ("eager", "fused"):
            raise ValueError(f"mode must be 'eager' or 'fused', got {self.mode!r}")


def _as_number(value: Bytes) -> Union[int, float]:
    if isinstance(value, Fraction):
        return int(value) if value.denominator == 1 else float(value)
    return value


@dataclass(frozen=True)
class RunSummary:
    """Aggregated view of one simulation run."""

    totals: StatsDelta
    by_class: dict[str, StatsDelta]
    by_phase_class: dict[tuple[str, str], StatsDelta]
    per_token: tuple[StatsDelta, ...] = ()

    @property
    def dispatch_total(self) -> int:
        return self.totals.dispatches

    def opcount_share(self, op_class: str) -> float:
        """Fraction of total compute ops contributed by one operator class."""
        if self.totals.opcount == 0:
            return 0.0
        return self.by_class.get(op_class, ZERO_DELTA).opcount / self.totals.opcount

    @property
    def total_tops(self) -> float:
        return self.totals.opcount / 1e12

    @property
    def total_gops(self) -> float:
        return self.totals.opcount / 1e9

    @property
    def read_gb(self) -> float:
        """Read-side traffic (weights + activations + KV reads), decimal GB."""
        return float(Fraction(self.totals.read_bytes)) / 1e9

    @property
    def kv_gib(self) -> float:
        """KV bytes written, binary GiB (cache-capacity convention)."""
        return float(Fraction(self.totals.kv_wr)) / 2**30

    def to_json_obj(self) -> dict:
        def delta_obj(d: StatsDelta) -> dict:
            return {
                "opcount": d.opcount,
                "mem_rd": _as_number(d.mem_rd),
                "mem_wr": _as_number(d.mem_wr),
                "kv_rd": _as_number(d.kv_rd),
                "kv_wr": _as_number(d.kv_wr),
                "dispatches": d.dispatches,
            }

        return {
            "totals": delta_obj(self.totals),
            "by_class": {cls: delta_obj(d) for cls, d in sorted(self.by_class.items())},
            "per_token": [delta_obj(d) for d in self.per_token],
            "dispatch_total": self.dispatch_total,
        }


CSV_COLUMNS = ("phase", "op_class", "opcount", "mem_rd", "mem_wr", "kv_rd", "kv_wr", "dispatches")


class StatsDB:
    """Single-writer accumulator for one simulation run."""

    def __init__(self) -> None:
        self._records: list[StatsRecord] = []
        self._totals = ZERO_DELTA
        self._by_class: dict[str, StatsDelta] = {}
        self._by_phase_class: dict[tuple[str, str], StatsDelta] = {}
        self._per_token: list[StatsDelta] = []

    def record(self, rec: StatsRecord) -> None:
        """Append a record and update running aggregates."""
        self._records.append(rec)
        self._totals = self._totals + rec.delta
        self._by_class[rec.op_class] = self._by_class.get(rec.op_class, ZERO_DELTA) + rec.delta
        key = (rec.phase, rec.op_class)
        self._by_phase_class[key] = self._by_phase_class.get(key, ZERO_DELTA) + rec.delta

    def record_token(self, delta: StatsDelta) -> None:
        """Store one generated token's aggregate delta for timeline runs."""
        self._per_token.append(delta)

    @property
    def records(self) -> tuple[StatsRecord, ...]:
        return tuple(self._records)

    def summarize(
        self,
        phase: Optional[str] = None,
        predicate: Optional[Callable[[StatsRecord], bool]] = None,
    ) -> RunSummary:
        """Aggregate, optionally restricted by phase or an arbitrary record
        predicate. Result is independent of record order."""
        if phase is None and predicate is None:
            return RunSummary(
                totals=self._totals,
                by_class=dict(self._by_class),
                by_phase_class=dict(self._by_phase_class),
                per_token=tuple(self._per_token),
            )
        totals = ZERO_DELTA
        by_class: dict[str, StatsDelta] = {}
        by_phase_class: dict[tuple[str, str], StatsDelta] = {}
        for rec in self._records:
            if phase is not None and rec.phase != phase:
                continue
            if predicate is not None and not predicate(rec):
                continue
            totals = totals + rec.delta
            by_class[rec.op_class] = by_class.get(rec.op_class, ZERO_DELTA) + rec.delta
            key = (rec.phase, rec.op_class)
            by_phase_class[key] = by_phase_class.get(key, ZERO_DELTA) + rec.delta
        return RunSummary(
            totals=totals,
            by_class=by_class,
            by_phase_class=by_phase_class,
            per_token=tuple(self._per_token),
        )


def render_summary_csv(summary: RunSummary) -> str:
    """Stable CSV rendering: one row per (phase, op_class), sorted."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for (phase, op_class), d in sorted(summary.by_phase_class.items()):
        writer.writerow(
            [
                phase,
                op_class,
                d.opcount,
                _as_number(d.mem_rd),
                _as_number(d.mem_wr),
                _as_number(d.kv_rd),
                _as_number(d.kv_wr),
                d.dispatches,
            ]
        )
    return buf.getvalue()


def render_summary_json(summary: RunSummary) -> str:
    return json.dumps(summary.to_json_obj(), indent=2, sort_keys=True) + "\n"


def export(summary: RunSummary, fmt: str, path: Union[str, Path]) -> Path:
    """Write a summary to disk; identical inputs produce byte-identical files."""
    if fmt == "csv":
        text = render_summary_csv(summary)
    elif fmt == "json":
        text = render_summary_json(summary)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def import_summary_json(text: str) -> RunSummary:
    """Rebuild a RunSummary from its JSON export (round-trip support)."""

    def delta_of(obj: dict) -> StatsDelta:
        def num(x: Union[int, float]) -> Bytes:
            return x if isinstance(x, int) else Fraction(x).limit_denominator(2)

        return StatsDelta(
            opcount=obj["opcount"],
            mem_rd=num(obj["mem_rd"]),
            mem_wr=num(obj["mem_wr"]),
            kv_rd=num(obj["kv_rd"]),
            kv_wr=num(obj["kv_wr"]),
            dispatches=obj["dispatches"],
        )

    doc = json.loads(text)
    return RunSummary(
        totals=delta_of(doc["totals"]),
        by_class={cls: delta_of(d) for cls, d in doc["by_class"].items()},
        by_phase_class={},
        per_token=tuple(delta_of(d) for d in doc["per_token"]),
    )
