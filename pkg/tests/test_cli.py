import json
import subprocess
import sys

import pytest

from onigraph.cli import cli_dispatch


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "synth"
    code = cli_dispatch(
        ["synth-data", "--out", str(d), "--lat", "6", "--lon", "6", "--months", "60", "--seed", "3"]
    )
    assert code == 0
    return d


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "c.json"
    path.write_text(
        json.dumps(
            {
                "model": {"layer_dims": [8, 8]},
                "train": {"epochs": 3, "embed_dim": 8},
                "data": {"train_fraction": 0.8},
            }
        )
    )
    return path


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, synth_dir, small_config):
    out = tmp_path_factory.mktemp("model") / "m.ckpt"
    code = cli_dispatch(
        [
            "train",
            "--config", str(small_config),
            "--data", str(synth_dir),
            "--lead", "1",
            "--seed", "7",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


def test_synth_data_writes_container(synth_dir):
    assert (synth_dir / "manifest.json").exists()
    assert (synth_dir / "data.bin").exists()
    assert (synth_dir / "synth_spec.json").exists()
    spec = json.loads((synth_dir / "synth_spec.json").read_text())
    assert spec["seed"] == 3 and len(spec["driver_cells"]) >= 1


def test_train_writes_checkpoint_and_loss_history(checkpoint):
    assert checkpoint.exists()
    loss_csv = checkpoint.parent / (checkpoint.name + ".loss.csv")
    lines = loss_csv.read_text().strip().splitlines()
    assert lines[0] == "epoch,batch,loss"
    assert len(lines) > 1


def test_evaluate_writes_reports(checkpoint, synth_dir, tmp_path):
    out = tmp_path / "eval"
    code = cli_dispatch(
        [
            "evaluate",
            "--checkpoint", str(checkpoint),
            "--data", str(synth_dir),
            "--out", str(out),
        ]
    )
    assert code == 0
    report = (tmp_path / "eval.report.csv").read_text().splitlines()
    assert report[0] == "lead,r,rmse,n"
    assert (tmp_path / "eval.predictions.csv").exists()
    assert (tmp_path / "eval.series.svg").exists()


def test_evaluate_supports_ensembles(checkpoint, synth_dir):
    code = cli_dispatch(
        [
            "evaluate",
            "--checkpoint", str(checkpoint),
            "--checkpoint", str(checkpoint),
            "--data", str(synth_dir),
        ]
    )
    assert code == 0


def test_predict_writes_csv(checkpoint, synth_dir, tmp_path):
    out = tmp_path / "p.csv"
    code = cli_dispatch(
        ["predict", "--checkpoint", str(checkpoint), "--data", str(synth_dir), "--out", str(out)]
    )
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "index,prediction"
    assert len(lines) > 1


def test_centrality_writes_heatmap(checkpoint, tmp_path):
    out = tmp_path / "heat"
    code = cli_dispatch(["centrality", "--checkpoint", str(checkpoint), "--out", str(out)])
    assert code == 0
    assert (tmp_path / "heat.csv").exists()
    assert (tmp_path / "heat.svg").exists()


def test_gradcheck_passes():
    assert cli_dispatch(["gradcheck", "--seed", "1"]) == 0


def test_unknown_command_is_usage_error(capsys):
    assert cli_dispatch(["frobnicate"]) == 1


def test_unknown_flag_is_usage_error():
    assert cli_dispatch(["gradcheck", "--bogus"]) == 1


def test_missing_data_dir_is_data_error(checkpoint, tmp_path):
    code = cli_dispatch(
        ["evaluate", "--checkpoint", str(checkpoint), "--data", str(tmp_path / "nope")]
    )
    assert code == 2


def test_bad_config_is_usage_error(synth_dir, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"nonsense": {}}))
    code = cli_dispatch(["train", "--config", str(cfg), "--data", str(synth_dir)])
    assert code == 1


def test_cross_process_evaluation_is_identical(checkpoint, synth_dir, tmp_path):
    def run(tag):
        out = tmp_path / tag
        proc = subprocess.run(
            [
                sys.executable, "-m", "onigraph", "evaluate",
                "--checkpoint", str(checkpoint),
                "--data", str(synth_dir),
                "--out", str(out),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        return (tmp_path / f"{tag}.predictions.csv").read_bytes()

    assert run("a") == run("b")


def test_ablation_prints_table(synth_dir, small_config, capsys):
    code = cli_dispatch(
        [
            "ablation",
            "--config", str(small_config),
            "--data", str(synth_dir),
            "--lead", "1",
            "--seeds", "0",
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "learned" in out and "local" in out and "gap=" in out
