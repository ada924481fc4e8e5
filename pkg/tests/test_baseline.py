"""2PL sharding baseline and the livelock comparison against the engine."""

from parex.config import (
    EpochConfig,
    ExperimentConfig,
    GroupsConfig,
    StorageConfig,
    WorkloadConfig,
)
from parex.baseline import run_baseline_2pl
from parex.harness import build_bundle, execute_config
from parex.crypto import MockBackend
from parex.ordering import COMPLEX, ConsensusModel


def _pair_config(seed, mode):
    return ExperimentConfig(
        seed=seed,
        consensus=ConsensusModel(rounds_per_second=1.0, tx_per_block=100),
        groups=GroupsConfig(count=2, size=3),
        storage=StorageConfig(shard_count=2, shard_size=3),
        exec_cost_ms=10.0,
        workload=WorkloadConfig(kind="adversarial-pair", total=2, account_population=2),
        epoch=EpochConfig(length_rounds=0),
        mode=mode,
    )


def test_adversarial_pair_both_abort_under_2pl():
    for seed in range(20):
        cfg = _pair_config(seed, "baseline-2pl")
        result = run_baseline_2pl(cfg, build_bundle(cfg, MockBackend()))
        assert result.metrics.aborts == 2
        assert set(result.outcomes.values()) == {"aborted"}


def test_single_tx_commits_under_2pl():
    cfg = _pair_config(3, "baseline-2pl")
    bundle = build_bundle(cfg, MockBackend())
    bundle.transactions = bundle.transactions[:1]
    result = run_baseline_2pl(cfg, bundle)
    assert result.metrics.aborts == 0
    assert list(result.outcomes.values()) == ["committed"]


def test_disjoint_txs_commit_under_2pl():
    cfg = _pair_config(4, "baseline-2pl")
    bundle = build_bundle(cfg, MockBackend())
    a, b = bundle.transactions
    a.touched = ("contract0",)
    b.touched = ("contract1",)
    result = run_baseline_2pl(cfg, bundle)
    assert result.metrics.aborts == 0
    assert set(result.outcomes.values()) == {"committed"}


def test_same_pair_commits_in_consecutive_rounds_in_parallel_mode():
    for seed in range(10):
        out = execute_config(_pair_config(seed, "parallel"))
        assert out.metrics.aborts == 0
        assert out.metrics.confirmed == 2
        rounds = sorted(out.run.dispatch_round[tx_id] for tx_id in (0, 1))
        assert rounds[1] == rounds[0] + 1


def test_baseline_throughput_fields_populated():
    cfg = _pair_config(5, "baseline-2pl")
    result = run_baseline_2pl(cfg, build_bundle(cfg, MockBackend()))
    assert result.metrics.submitted == 2
    assert result.metrics.aborts == 2
    assert result.metrics.confirmed == 0
