"""Per-run metrics and the delimited/JSON artifacts a run leaves behind."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

CSV_HEADER = (
    "run_id,m,group_size,consensus_tps,workload,throughput_tps,"
    "simple_latency_ms,complex_latency_ms,processing_time_s,aborts"
)


@dataclass
class MetricsRecord:
    run_id: str
    m: int
    group_size: int
    consensus_tps: float
    workload: str
    throughput_tps: float
    simple_latency_ms: float
    complex_latency_ms: float
    processing_time_s: float
    aborts: int
    # Bookkeeping beyond the delimited columns.
    submitted: int = 0
    confirmed: int = 0
    rejected: int = 0
    cached_in_flight: int = 0
    cached_events: int = 0
    per_group_utilization: list[float] = field(default_factory=list)

    def csv_row(self) -> str:
        return ",".join(
            (
                self.run_id,
                str(self.m),
                str(self.group_size),
                _num(self.consensus_tps),
                self.workload,
                _num(self.throughput_tps),
                _num(self.simple_latency_ms),
                _num(self.complex_latency_ms),
                _num(self.processing_time_s),
                str(self.aborts),
            )
        )

    def accounted(self) -> bool:
        """Every submitted transaction ends confirmed, queued, or rejected."""
        return self.confirmed + self.cached_in_flight + self.rejected == self.submitted


def _num(x: float) -> str:
    return f"{x:.4f}"


def write_metrics_csv(path: str | Path, records: Iterable[MetricsRecord]) -> None:
    lines = [CSV_HEADER]
    lines.extend(r.csv_row() for r in records)
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_trace_digest(path: str | Path, digest: str) -> None:
    Path(path).write_text(digest + "\n")


def summary_payload(record: MetricsRecord, extra: dict | None = None) -> dict:
    payload = asdict(record)
    if extra:
        payload.update(extra)
    return payload
