import csv
import json

import pytest

from opsched import cli
from opsched.graph import ModelGraph, make_node, save_graph


def _run(tmp_path, *argv):
    return cli.main([argv[0], "--out", str(tmp_path), *argv[1:]])


def test_simulate_writes_outputs(tmp_path):
    assert _run(tmp_path, "simulate", "--graph", "chain:6", "--scheduler", "dp") == cli.EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["total_latency"] > 0
    assert (tmp_path / "phases.csv").read_text().startswith("phase,")
    manifest = json.loads((tmp_path / "manifest-simulate.json").read_text())
    assert manifest["command"] == "simulate" and len(manifest["config_hash"]) == 64


def test_repeat_adds_summary_rows(tmp_path):
    assert _run(tmp_path, "simulate", "--graph", "chain:5", "--scheduler", "greedy", "--repeat", "3") == 0
    rows = list(csv.reader((tmp_path / "runs.csv").open()))
    assert [r[0] for r in rows] == ["run", "0", "1", "2", "mean", "std"]


def test_optimize_batch_trace(tmp_path):
    assert _run(tmp_path, "simulate", "--graph", "suite:1", "--scheduler", "gpu_only", "--optimize-batch") == 0
    assert (tmp_path / "batch_trace.csv").exists()


def test_unknown_profile_is_config_error(tmp_path):
    assert _run(tmp_path, "simulate", "--profile", "nonexistent_board") == cli.EXIT_CONFIG


def test_bad_graph_is_config_error(tmp_path):
    bad = tmp_path / "g.json"
    bad.write_text('{"name": "x", "nodes": [], "edges": [[0, 1]]}')
    assert _run(tmp_path, "simulate", "--graph", str(bad)) == cli.EXIT_CONFIG


def test_memory_overflow_is_infeasible(tmp_path):
    big = make_node(0, "Linear", (1, 4096, 1, 1), (1, 1 << 20, 1, 1))
    path = tmp_path / "big.json"
    save_graph(ModelGraph("big", (big,), ()), path)
    code = _run(tmp_path, "simulate", "--graph", str(path), "--scheduler", "gpu_only", "--profile", "orin_nano")
    assert code == cli.EXIT_INFEASIBLE


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("nan")
    monkeypatch.setattr(cli, "make_plan", boom)
    assert _run(tmp_path, "simulate", "--graph", "chain:3") == cli.EXIT_NUMERIC


def test_config_file_supplies_defaults(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"graph": "chain:4", "scheduler": "cpu_only"}))
    assert _run(tmp_path, "simulate", "--config", str(conf)) == 0
    assert json.loads((tmp_path / "report.json").read_text())["scheduler"] == "cpu_only"


def _strip_timing(path):
    rows = list(csv.reader(path.open()))
    drop = [rows[0].index(c) for c in cli.TIMING_COLUMNS]
    return [[v for i, v in enumerate(r) if i not in drop] for r in rows]


def test_sweep_is_deterministic(tmp_path):
    args = ["--models", "suite:0", "suite:1", "--schedulers", "greedy", "dp", "static", "--profiles", "agx_orin"]
    assert _run(tmp_path / "a", "sweep", *args) == 0
    assert _run(tmp_path / "b", "sweep", *args) == 0
    a, b = _strip_timing(tmp_path / "a" / "sweep.csv"), _strip_timing(tmp_path / "b" / "sweep.csv")
    assert a == b and len(a) == 7
    assert a[0] == [c for c in cli.SWEEP_COLUMNS if c not in cli.TIMING_COLUMNS]


def test_groundtruth_and_predictor_round_trip(tmp_path):
    assert _run(tmp_path, "gen-groundtruth", "--profiles", "orin_nano") == 0
    samples = tmp_path / "samples.json"
    code = cli.main(["train-predictor", "--out", str(tmp_path), "--samples", str(samples), "--epochs", "2",
                     "--hidden", "16", "--heads", "2", "--lstm-hidden", "8"])
    assert code == 0
    assert (tmp_path / "predictor.json").exists()


def test_malformed_samples_file(tmp_path):
    bad = tmp_path / "s.json"
    bad.write_text("{}")
    assert cli.main(["train-predictor", "--out", str(tmp_path), "--samples", str(bad)]) == cli.EXIT_CONFIG


def test_train_scheduler_and_convergence(tmp_path):
    assert _run(tmp_path, "train-scheduler", "--graph", "chain:3", "--episodes", "20", "--warmup", "32") == 0
    assert (tmp_path / "learning_curve.csv").exists() and (tmp_path / "plan.json").exists()
    assert _run(tmp_path, "convergence", "--graph", "chain:4", "--schedulers", "greedy", "dp") == 0


def test_version_flag(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--version"])
    assert "opsched" in capsys.readouterr().out
