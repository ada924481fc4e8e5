"""CLI surface and artifact writing."""

import json
from pathlib import Path

from parex.cli import main
from parex.metrics import CSV_HEADER


def _write_config(tmp_path, **overrides):
    raw = {
        "seed": 5,
        "consensus": {"rounds_per_second": 1.0, "tx_per_block": 200},
        "groups": {"count": 2, "size": 3},
        "storage": {"shard_count": 2, "shard_size": 3},
        "exec_cost_ms": 10.0,
        "workload": {
            "kind": "mixed",
            "total": 150,
            "contract_population": 80,
            "account_population": 30,
        },
        "epoch": {"length_rounds": 0},
    }
    raw.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "metrics.csv").read_text().splitlines()[0] == CSV_HEADER
    assert (out / "summary.json").exists()
    assert len((out / "trace_digest.txt").read_text().strip()) == 64
    assert (out / "run_summary.png").exists()


def test_run_no_plot_skips_figure(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--no-plot"]) == 0
    assert not (out / "run_summary.png").exists()


def test_run_seed_override_changes_digest(tmp_path):
    cfg = _write_config(tmp_path)
    out1, out2, out3 = (tmp_path / f"o{i}" for i in range(3))
    main(["run", "--config", str(cfg), "--out", str(out1), "--no-plot"])
    main(["run", "--config", str(cfg), "--out", str(out2), "--no-plot"])
    main(["run", "--config", str(cfg), "--seed", "99", "--out", str(out3), "--no-plot"])
    d1 = (out1 / "trace_digest.txt").read_text()
    d2 = (out2 / "trace_digest.txt").read_text()
    d3 = (out3 / "trace_digest.txt").read_text()
    assert d1 == d2
    assert d1 != d3


def test_sweep_writes_one_row_per_value(tmp_path):
    cfg = _write_config(
        tmp_path,
        workload={
            "kind": "all-complex",
            "total": 100,
            "contract_population": 5000,
            "account_population": 20,
        },
    )
    out = tmp_path / "sweep"
    assert main(
        ["sweep", "--config", str(cfg), "--param", "groups=1,2,4", "--out", str(out)]
    ) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 4
    assert (out / "sweep_groups.png").exists()


def test_prob_command_prints_12_sig_digits(capsys):
    assert main(
        ["prob", "--group-size", "600", "--alpha", "0.25", "--family", "third"]
    ) == 0
    out = capsys.readouterr().out
    assert "failure_probability 2.97182196691e-06" in out


def test_prob_with_target_reports_minimum(capsys):
    assert main(
        [
            "prob",
            "--group-size",
            "70",
            "--alpha",
            "0.25",
            "--family",
            "majority",
            "--target",
            "1e-6",
        ]
    ) == 0
    out = capsys.readouterr().out
    assert "minimal_group_size 79" in out


def test_trace_command(tmp_path):
    cfg = _write_config(tmp_path)
    trace = tmp_path / "trace.csv"
    trace.write_text(
        "0,simple,alice,bob,10\n"
        "1,complex,bob,contract0,10\n"
        "2,complex,alice,contract1,10\n"
    )
    out = tmp_path / "traced"
    assert main(
        ["trace", "--file", str(trace), "--config", str(cfg), "--out", str(out), "--no-plot"]
    ) == 0
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 2


def test_bad_config_returns_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{\"groups\": {\"count\": 0, \"size\": 3}}")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "x")]) == 2
    assert "error:" in capsys.readouterr().err
