"""Top-level experiment entry points: single runs, sweeps, artifacts.

A run wires the workload generator, the engine (or the 2PL baseline), and
the metrics writers.  Artifacts per output directory:

* ``metrics.csv``      one delimited row per run
* ``summary.json``     full metrics plus accounting counters
* ``trace_digest.txt`` hex SHA-256 of the processed event stream
* ``*.png``            figures rendered from the same records (optional)
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .baseline import BaselineResult, run_baseline_2pl
from .config import (
    MODE_BASELINE_2PL,
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
)
from .crypto import MockBackend
from .engine import ExperimentEngine, RunResult
from .errors import ConfigError
from .metrics import (
    MetricsRecord,
    summary_payload,
    write_metrics_csv,
    write_summary_json,
    write_trace_digest,
)
from .workload import WorkloadBundle, generate_workload


@dataclass
class ExperimentOutcome:
    config: ExperimentConfig
    metrics: MetricsRecord
    trace_digest: str
    run: Optional[RunResult] = None
    baseline: Optional[BaselineResult] = None


def build_bundle(config: ExperimentConfig, backend: MockBackend) -> WorkloadBundle:
    return generate_workload(config.workload, config.seed, config.exec_cost_ms, backend)


def execute_config(config: ExperimentConfig) -> ExperimentOutcome:
    """Run one experiment in memory; no files touched."""
    config.validate()
    backend = MockBackend()
    bundle = build_bundle(config, backend)
    if config.mode == MODE_BASELINE_2PL:
        result = run_baseline_2pl(config, bundle)
        return ExperimentOutcome(config, result.metrics, result.trace_digest, baseline=result)
    engine = ExperimentEngine(config, bundle, backend=backend)
    run = engine.run()
    return ExperimentOutcome(config, run.metrics, run.trace_digest, run=run)


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    *,
    plot: bool = True,
) -> ExperimentOutcome:
    """Run one experiment and, when out_dir is given, write its artifacts."""
    outcome = execute_config(config)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", [outcome.metrics])
        extra = {"config": config_to_dict(config)}
        if outcome.run is not None:
            extra.update(
                balance_conserved=outcome.run.balance_conserved,
                rounds=outcome.run.rounds,
                epochs=outcome.run.epochs,
                result_rejections=outcome.run.result_rejections,
            )
        write_summary_json(out / "summary.json", summary_payload(outcome.metrics, extra))
        write_trace_digest(out / "trace_digest.txt", outcome.trace_digest)
        if plot:
            from .plotting import plot_run

            plot_run(outcome.metrics, out / "run_summary.png")
    return outcome


_SWEEP_PARAMS = {
    "groups": ("groups", "count", int),
    "group_size": ("groups", "size", int),
    "batch": ("consensus", "tx_per_block", int),
    "tx_per_block": ("consensus", "tx_per_block", int),
    "rounds_per_second": ("consensus", "rounds_per_second", float),
    "exec_cost_ms": (None, "exec_cost_ms", float),
    "total": ("workload", "total", int),
    "seed": (None, "seed", int),
}


def sweep_values(param: str, values: Sequence[str | int | float]) -> list:
    if param not in _SWEEP_PARAMS:
        raise ConfigError(
            f"unknown sweep parameter {param!r}; known: {sorted(_SWEEP_PARAMS)}"
        )
    _, _, cast = _SWEEP_PARAMS[param]
    return [cast(v) for v in values]


def apply_param(config: ExperimentConfig, param: str, value) -> ExperimentConfig:
    raw = config_to_dict(config)
    section, key, cast = _SWEEP_PARAMS[param]
    if section is None:
        raw[key] = cast(value)
    else:
        raw[section][key] = cast(value)
    raw["run_id"] = f"{config.run_id}-{param}{value}"
    return config_from_dict(raw)


def sweep(
    config: ExperimentConfig,
    param: str,
    values: Sequence,
    out_dir: str | Path | None = None,
    *,
    plot: bool = True,
) -> list[ExperimentOutcome]:
    """One run per grid point, aggregated into a single CSV (and figure)."""
    if not values:
        raise ConfigError("sweep grid is empty")
    cast_values = sweep_values(param, values)
    outcomes = [execute_config(apply_param(config, param, v)) for v in cast_values]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", [o.metrics for o in outcomes])
        write_summary_json(
            out / "summary.json",
            {
                "param": param,
                "values": list(cast_values),
                "runs": [summary_payload(o.metrics) for o in outcomes],
            },
        )
        write_trace_digest(
            out / "trace_digest.txt",
            "\n".join(o.trace_digest for o in outcomes),
        )
        if plot:
            from .plotting import plot_sweep

            plot_sweep(
                [o.metrics for o in outcomes],
                param,
                cast_values,
                out / f"sweep_{param}.png",
            )
    return outcomes
