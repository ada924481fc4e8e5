"""Figure rendering for run and sweep reports (PNG next to the CSV)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import MetricsRecord


def plot_run(record: MetricsRecord, path: str | Path) -> None:
    """Per-group utilization bars with the headline numbers in the title."""
    fig, ax = plt.subplots(figsize=(7, 4))
    util = record.per_group_utilization or [0.0]
    ax.bar(range(len(util)), util, color="#4878d0")
    ax.set_xlabel("Execution group")
    ax.set_ylabel("Utilization")
    ax.set_ylim(0, 1.05)
    ax.set_title(
        f"{record.run_id}: {record.throughput_tps:.0f} tx/s, "
        f"simple {record.simple_latency_ms:.0f} ms / "
        f"complex {record.complex_latency_ms:.0f} ms"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(
    records: Sequence[MetricsRecord],
    param: str,
    values: Sequence,
    path: str | Path,
) -> None:
    """Throughput and processing time against the swept parameter."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    tput = [r.throughput_tps for r in records]
    ptime = [r.processing_time_s for r in records]
    ax1.plot(values, tput, marker="o", color="#4878d0")
    ax1.set_xlabel(param)
    ax1.set_ylabel("Throughput (tx/s)")
    ax1.grid(True, alpha=0.3)
    ax2.plot(values, ptime, marker="s", color="#d65f5f")
    ax2.set_xlabel(param)
    ax2.set_ylabel("Processing time (s)")
    ax2.grid(True, alpha=0.3)
    if len(values) > 1 and all(v > 0 for v in values):
        ax1.set_xscale("log", base=2)
        ax2.set_xscale("log", base=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
