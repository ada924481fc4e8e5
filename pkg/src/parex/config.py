"""Experiment configuration: JSON in, validated dataclasses out.

The file format mirrors the configuration fields one to one (snake_case
keys).  A minimal config is just a seed, a consensus rate, a group layout,
and a workload; everything else has defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError, ParameterError
from .ordering import ConsensusModel

MODE_PARALLEL = "parallel"
MODE_BASELINE_2PL = "baseline-2pl"

THRESHOLD_MAJORITY = "majority"
THRESHOLD_ALL = "all"

WORKLOAD_ALL_COMPLEX = "all-complex"
WORKLOAD_MIXED = "mixed"
WORKLOAD_TRACE = "trace"
WORKLOAD_ADVERSARIAL_PAIR = "adversarial-pair"

_WORKLOAD_KINDS = (
    WORKLOAD_ALL_COMPLEX,
    WORKLOAD_MIXED,
    WORKLOAD_TRACE,
    WORKLOAD_ADVERSARIAL_PAIR,
)


@dataclass
class GroupsConfig:
    count: int = 4
    size: int = 5
    decision_threshold: str = THRESHOLD_MAJORITY

    def validate(self) -> None:
        if self.count < 1:
            raise ConfigError("groups.count must be >= 1")
        if self.size < 1 or self.size % 2 == 0:
            raise ConfigError("groups.size must be odd (2f'+1)")
        if self.decision_threshold not in (THRESHOLD_MAJORITY, THRESHOLD_ALL):
            raise ConfigError("groups.decision_threshold must be 'majority' or 'all'")

    @property
    def max_faulty(self) -> int:
        return (self.size - 1) // 2


@dataclass
class StorageConfig:
    shard_count: int = 2
    shard_size: int = 3
    cache_enabled: bool = True
    final_flush: bool = True  # write caches and balances back at run end

    def validate(self) -> None:
        if self.shard_count < 1:
            raise ConfigError("storage.shard_count must be >= 1")
        if self.shard_size < 1 or self.shard_size % 2 == 0:
            raise ConfigError("storage.shard_size must be odd (2f''+1)")

    @property
    def max_faulty(self) -> int:
        return (self.shard_size - 1) // 2


@dataclass
class EpochConfig:
    length_rounds: int = 10  # 0 disables rotation
    rotation_fraction: float = 1 / 3

    def validate(self) -> None:
        if self.length_rounds < 0:
            raise ConfigError("epoch.length_rounds must be >= 0")
        if not 0 < self.rotation_fraction <= 1:
            raise ConfigError("epoch.rotation_fraction must be in (0, 1]")


@dataclass
class WorkloadConfig:
    kind: str = WORKLOAD_MIXED
    total: int = 1000
    simple_ratio: float = 0.47
    contract_population: int = 1000
    account_population: int = 200
    conflict_rule: str = "same-contract"
    trace_path: str = ""

    def validate(self) -> None:
        if self.kind not in _WORKLOAD_KINDS:
            raise ConfigError(f"unknown workload kind {self.kind!r}")
        if self.total < 0:
            raise ConfigError("workload.total must be >= 0")
        if not 0 <= self.simple_ratio <= 1:
            raise ConfigError("workload.simple_ratio must be in [0, 1]")
        if self.kind == WORKLOAD_TRACE and not self.trace_path:
            raise ConfigError("trace workload needs workload.trace_path")
        if self.contract_population < 1 or self.account_population < 2:
            raise ConfigError("workload populations too small")


@dataclass
class FaultSpec:
    target: str  # "en" | "storage"
    group: int  # group index, or shard index for storage targets
    rank: int
    mode: str  # "crash" | "byzantine"
    at_ms: float = 0.0

    def node_id(self) -> str:
        prefix = "en" if self.target == "en" else "st"
        return f"{prefix}:{self.group}:{self.rank}"

    def validate(self) -> None:
        if self.target not in ("en", "storage"):
            raise ConfigError(f"fault target must be 'en' or 'storage', got {self.target!r}")
        if self.mode not in ("crash", "byzantine"):
            raise ConfigError(f"fault mode must be 'crash' or 'byzantine', got {self.mode!r}")
        if self.at_ms < 0:
            raise ConfigError("fault time must be >= 0")


@dataclass
class ExperimentConfig:
    seed: int = 0
    consensus: ConsensusModel = field(default_factory=ConsensusModel)
    groups: GroupsConfig = field(default_factory=GroupsConfig)
    storage: StorageConfig = field(default_factory=StorageConfig)
    exec_cost_ms: float = 10.0
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    fault_schedule: list[FaultSpec] = field(default_factory=list)
    epoch: EpochConfig = field(default_factory=EpochConfig)
    mode: str = MODE_PARALLEL
    assignment_mode: str = "round_robin"
    latency_base_ms: dict[str, float] = field(
        default_factory=lambda: {
            "client_cn": 50.0,
            "cn_en": 50.0,
            "intra_group": 50.0,
            "en_storage": 50.0,
        }
    )
    latency_jitter_ms: float = 20.0
    latency_delta_bound_ms: float = 200.0
    fault_budget: float = 0.25  # declared global fraction of ENs allowed to fail
    run_id: str = "run"

    def decision_threshold_count(self) -> int:
        if self.groups.decision_threshold == THRESHOLD_ALL:
            return self.groups.size
        return self.groups.max_faulty + 1  # f' + 1, a strict majority

    def validate(self) -> None:
        if self.mode not in (MODE_PARALLEL, MODE_BASELINE_2PL):
            raise ConfigError(f"unknown mode {self.mode!r}")
        self.groups.validate()
        self.storage.validate()
        self.epoch.validate()
        self.workload.validate()
        if self.exec_cost_ms < 0:
            raise ConfigError("exec_cost_ms must be >= 0")
        per_group: dict[int, int] = {}
        per_shard: dict[int, int] = {}
        for spec in self.fault_schedule:
            spec.validate()
            if spec.target == "en":
                if not (0 <= spec.group < self.groups.count and 0 <= spec.rank < self.groups.size):
                    raise ConfigError(f"fault target {spec.node_id()} out of range")
                per_group[spec.group] = per_group.get(spec.group, 0) + 1
            else:
                if not (0 <= spec.group < self.storage.shard_count and 0 <= spec.rank < self.storage.shard_size):
                    raise ConfigError(f"fault target {spec.node_id()} out of range")
                per_shard[spec.group] = per_shard.get(spec.group, 0) + 1
        for g, count in per_group.items():
            if count > self.groups.max_faulty:
                raise ConfigError(
                    f"group {g} has {count} faults, above f'={self.groups.max_faulty}"
                )
        for s, count in per_shard.items():
            if count > self.storage.max_faulty:
                raise ConfigError(
                    f"shard {s} has {count} faults, above f''={self.storage.max_faulty}"
                )
        if not 0 <= self.fault_budget <= 1:
            raise ConfigError("fault_budget must be in [0, 1]")
        total_en = self.groups.count * self.groups.size
        en_faults = sum(per_group.values())
        if en_faults > self.fault_budget * total_en:
            raise ConfigError(
                f"{en_faults} faulty nodes exceed the declared budget of "
                f"{self.fault_budget:.0%} of {total_en}"
            )


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    try:
        consensus = ConsensusModel(**raw.get("consensus", {}))
    except (TypeError, ParameterError) as exc:
        raise ConfigError(f"bad consensus section: {exc}") from exc
    try:
        cfg = ExperimentConfig(
            seed=raw.get("seed", 0),
            consensus=consensus,
            groups=GroupsConfig(**raw.get("groups", {})),
            storage=StorageConfig(**raw.get("storage", {})),
            exec_cost_ms=raw.get("exec_cost_ms", 10.0),
            workload=WorkloadConfig(**raw.get("workload", {})),
            fault_schedule=[FaultSpec(**f) for f in raw.get("fault_schedule", [])],
            epoch=EpochConfig(**raw.get("epoch", {})),
            mode=raw.get("mode", MODE_PARALLEL),
            assignment_mode=raw.get("assignment_mode", "round_robin"),
            latency_base_ms={
                **ExperimentConfig().latency_base_ms,
                **raw.get("latency_base_ms", {}),
            },
            latency_jitter_ms=raw.get("latency_jitter_ms", 20.0),
            latency_delta_bound_ms=raw.get("latency_delta_bound_ms", 200.0),
            fault_budget=raw.get("fault_budget", 0.25),
            run_id=raw.get("run_id", "run"),
        )
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return asdict(cfg)
