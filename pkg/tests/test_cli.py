import json

import pytest
from click.testing import CliRunner

from main import cli
from models.config import TrainConfig
from utils.config_io import load_config

TINY_RUN = """\
learning_rate = 0.01
epochs = 2
balancing_epochs = 1
embedding_dim = 8
layer_count = 2
fanout = 4
k = 2
p = 0.5
"""

TINY_SYNTH = """\
num_blocks = 2
classes_per_block = 2
nodes_per_block = 20
feature_dim = 4
p_intra = 0.1
p_inter = 0.02
"""

TINY_MIXTURE = """\
dims = 2
train_samples = 100
eval_samples = 200
epochs = 2
hidden = 4
bootstrap = 10
"""


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def run_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_RUN)
    return path


def run_method(runner, data_dir, cfg, out, method="dymoe", *extra):
    return runner.invoke(cli, ["run", "--data", str(data_dir), "--config", str(cfg), "--method", method, "--out", str(out), *extra])


def test_synth_writes_a_loadable_dataset(runner, tmp_path):
    cfg = tmp_path / "synth.cfg"
    cfg.write_text(TINY_SYNTH)
    out = tmp_path / "data"
    result = runner.invoke(cli, ["synth", "--config", str(cfg), "--out", str(out), "--seed", "4"])
    assert result.exit_code == 0, result.output
    assert (out / "nodes.tsv").is_file() and (out / "edges.tsv").is_file()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 4 and manifest["status"] == 0


def test_run_writes_metrics_and_artifacts(runner, three_block_dir, run_cfg, tmp_path):
    out = tmp_path / "run"
    result = run_method(runner, three_block_dir, run_cfg, out)
    assert result.exit_code == 0, result.output
    assert "AA=" in result.output
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["method"] == "dymoe" and metrics["t"] == 3
    assert len(metrics["matrix"]) == 6
    assert metrics["leakage_violations"] == 0
    for name in ("train_log.csv", "specialization.csv", "memory.tsv", "manifest.json", "checkpoints/block_3.npz"):
        assert (out / name).exists(), name


def test_run_overrides_reach_the_settings(runner, three_block_dir, run_cfg, tmp_path):
    out = tmp_path / "dense"
    result = run_method(runner, three_block_dir, run_cfg, out, "dymoe", "--mode", "dense", "--k", "1", "--no-arrival-gate")
    assert result.exit_code == 0, result.output
    settings = json.loads((out / "metrics.json").read_text())["settings"]
    assert (settings["mode"], settings["k"], settings["use_arrival_gate"]) == ("dense", 1, False)


def test_unknown_config_key_exits_with_2(runner, three_block_dir, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("gama = 1.0\n")
    assert run_method(runner, three_block_dir, cfg, tmp_path / "out").exit_code == 2


def test_malformed_data_exits_with_3(runner, run_cfg, tmp_path):
    data = tmp_path / "broken"
    data.mkdir()
    (data / "nodes.tsv").write_text("x1\tnot-a-block\t0\ttrain\t0.0\n")
    (data / "edges.tsv").write_text("")
    assert run_method(runner, data, run_cfg, tmp_path / "out").exit_code == 3


def test_report_orders_rows_and_flags_missing_metrics(runner, three_block_dir, run_cfg, tmp_path):
    for method in ("pretrain", "dymoe"):
        assert run_method(runner, three_block_dir, run_cfg, tmp_path / method, method).exit_code == 0
    result = runner.invoke(cli, ["report", str(tmp_path / "pretrain"), str(tmp_path / "dymoe")])
    assert result.exit_code == 0, result.output
    lines = result.stdout.strip().splitlines()
    assert lines[0].startswith("run,method,seed,k,p,mode,AA,AF,diagonal")
    assert [line.split(",")[1] for line in lines[1:]] == ["dymoe", "pretrain"]

    (tmp_path / "empty").mkdir()
    assert runner.invoke(cli, ["report", str(tmp_path / "empty")]).exit_code == 3


def test_theorem_without_sweep(runner, tmp_path):
    cfg = tmp_path / "mixture.cfg"
    cfg.write_text(TINY_MIXTURE)
    result = runner.invoke(cli, ["theorem", "--config", str(cfg), "--out", str(tmp_path / "thm"), "--no-sweep"])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "thm" / "theorem_report.json").read_text())
    assert report["sweep"] == [] and report["verdict"] in ("holds", "inconclusive", "violated")


def test_run_records_the_resolved_config(runner, three_block_dir, run_cfg, tmp_path):
    out = tmp_path / "resolved"
    assert run_method(runner, three_block_dir, run_cfg, out, "dymoe", "--k", "1", "--seed", "3").exit_code == 0
    resolved = load_config(TrainConfig, out / "config.cfg")
    assert (resolved.k, resolved.seed, resolved.embedding_dim, resolved.p) == (1, 3, 8, 0.5)
    assert "config.cfg" in json.loads((out / "manifest.json").read_text())["outputs"]

    again = tmp_path / "again"
    assert run_method(runner, three_block_dir, out / "config.cfg", again).exit_code == 0
    assert json.loads((again / "metrics.json").read_text())["matrix"] == json.loads((out / "metrics.json").read_text())["matrix"]
