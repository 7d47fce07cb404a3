import json
import subprocess
import sys

import pytest

from piwm.cli import EXIT_CODES, main


@pytest.fixture
def runs(tmp_path, monkeypatch):
    monkeypatch.setenv("PIWM_RUNS", str(tmp_path))
    return tmp_path


def test_pipeline_end_to_end(runs, capsys):
    assert main(["gen", "--env", "cartpole", "--n", "12", "--m", "10", "--delta", "0.05", "--samples", "5"]) == 0
    assert main(["train", "--arch", "extrinsic", "--latent", "discrete", "--epochs", "2", "--dyn-epochs", "3",
                 "--max-steps-per-epoch", "3", "--codebook-size", "32", "--run-dir", str(runs / "run")]) == 0
    ckpts = {p.name: p.read_bytes() for p in (runs / "run").glob("*.ckpt")}
    assert sorted(ckpts) == ["dynamics.ckpt", "physical.ckpt", "vision.ckpt"]

    assert main(["eval", "all", "--horizon", "30"]) == 0
    assert "clipped" in capsys.readouterr().err
    report = json.loads((runs / "run" / "report-all-d0p05.json").read_text())
    assert report["rollout"]["horizon"] == 8 and len(report["rollout"]["rmse"]) == 8
    assert {p.name: p.read_bytes() for p in (runs / "run").glob("*.ckpt")} == ckpts

    assert main(["report", "--out", str(runs / "csv")]) == 0
    header = (runs / "csv" / "rollout.csv").read_text().splitlines()[0]
    assert header == "step,rmse_mean,rmse_std,delta,variant,seed_count"


def test_stagewise_training_and_mismatch(runs, capsys):
    main(["gen", "--n", "8", "--m", "6", "--samples", "3"])
    common = ["train", "--arch", "intrinsic", "--latent", "continuous", "--epochs", "2", "--max-steps-per-epoch",
              "2", "--dyn-epochs", "2", "--run-dir", str(runs / "r")]
    assert main(common + ["--stage", "representation"]) == 0
    assert main(common + ["--stage", "dynamics"]) == 0
    assert main(common + ["--stage", "dynamics", "--lambda-interp", "3"]) == EXIT_CODES["config"]
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["category"] == "config"
    assert main(common + ["--stage", "vision"]) == EXIT_CODES["config"]


def test_missing_inputs(runs, capsys):
    main(["gen", "--n", "2", "--m", "4", "--samples", "2"])
    assert main(["eval", "static", "--run", str(runs / "absent")]) == EXIT_CODES["checkpoint"]
    assert main(["train", "--data", str(runs / "absent.piwm")]) == EXIT_CODES["data"]


def test_unknown_flag_exits_with_usage(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "piwm", "train", "--bogus"], capture_output=True, text=True,
                          env={"PIWM_RUNS": str(tmp_path), "PATH": ""})
    assert proc.returncode == 2
    assert "usage:" in proc.stderr


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--instances", "1", "--dyn-instances", "1"]) == 0
    out = capsys.readouterr().out
    assert "dense" in out and "dyn_cartpole_H30" in out
