import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from myobench import experiment
from myobench.cli import main

CLI_TOML = """
[experiment]
subjects = 1
master_seed = 11
prompt_duration = 1.5

[fitts]
targets_total = 4
targets_scored = 2
dwell_s = 1.0
timeout_s = 6.0

[persona]
reaction_delay_s = 0.2
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.toml"
    config.write_text(CLI_TOML)
    return {"root": root, "config": str(config), "out": str(root / "runs")}


def run_cli(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def test_generate_command(workdir):
    result = run_cli(["generate", "--config", workdir["config"], "--out", workdir["out"]])
    assert result.exit_code == 0
    sessions = Path(workdir["out"]) / "subject_00" / "sessions"
    assert len(list(sessions.glob("*.emg"))) == 11
    assert "subject 0" in result.output


def test_generate_bad_config_exits_2(tmp_path):
    bad = tmp_path / "broken.toml"
    bad.write_text("[experiment\nsubjects = ")
    result = CliRunner().invoke(main, ["generate", "--config", str(bad)])
    assert result.exit_code == 2


def test_unknown_roster_exits_2(workdir):
    result = CliRunner().invoke(
        main,
        ["train", "--config", workdir["config"], "--out", workdir["out"],
         "--roster", "LDA-R,NOT-A-MODEL"],
    )
    assert result.exit_code == 2


def test_train_without_sessions_exits_3(workdir, tmp_path):
    result = CliRunner().invoke(
        main, ["train", "--config", workdir["config"], "--out", str(tmp_path / "empty")]
    )
    assert result.exit_code == 3


def test_train_roster_filtering(workdir):
    result = run_cli(
        ["train", "--config", workdir["config"], "--out", workdir["out"],
         "--roster", "LDA-R"]
    )
    assert result.exit_code == 0
    mdir = Path(workdir["out"]) / "subject_00" / "models"
    assert sorted(p.name for p in mdir.glob("*.model")) == ["LDA-R.model"]
    assert (mdir / "LDA-R.pc.json").exists()

    result = run_cli(
        ["train", "--config", workdir["config"], "--out", workdir["out"],
         "--roster", "LDA-R,LDA-D"]
    )
    assert result.exit_code == 0
    assert sorted(p.name for p in mdir.glob("*.model")) == ["LDA-D.model", "LDA-R.model"]


def test_offline_command_with_figures(workdir):
    result = run_cli(
        ["offline", "--config", workdir["config"], "--out", workdir["out"],
         "--roster", "LDA-R,LDA-D"]
    )
    assert result.exit_code == 0
    odir = Path(workdir["out"]) / "subject_00" / "offline"
    assert (odir / "report.json").exists()
    assert (odir / "LDA-R.decisions.csv").exists()
    assert (odir / "decision_streams.png").stat().st_size > 0
    assert (odir / "rejection_sweep.png").stat().st_size > 0
    assert "total error" in result.output


def test_fitts_command_writes_metrics(workdir):
    result = run_cli(
        ["fitts", "--config", workdir["config"], "--out", workdir["out"],
         "--roster", "LDA-R,LDA-D"]
    )
    assert result.exit_code == 0
    metrics = Path(workdir["out"]) / "metrics.csv"
    assert metrics.exists()
    fdir = Path(workdir["out"]) / "subject_00" / "fitts"
    assert (fdir / "LDA-R.run.csv").exists()
    assert (fdir / "LDA-D.summary.json").exists()


def test_fitts_rerun_is_byte_identical(workdir, tmp_path):
    args = ["--config", workdir["config"], "--roster", "LDA-R"]
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        assert run_cli(["generate", *args, "--out", str(out)]).exit_code == 0
        assert run_cli(["train", *args, "--out", str(out)]).exit_code == 0
        assert run_cli(["fitts", *args, "--out", str(out)]).exit_code == 0
    assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()
    run_a = out_a / "subject_00" / "fitts" / "LDA-R.run.csv"
    run_b = out_b / "subject_00" / "fitts" / "LDA-R.run.csv"
    assert run_a.read_bytes() == run_b.read_bytes()


def test_stats_command(workdir, tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for subject in range(4):
        for clf in ("LDA-R", "LSTM-V"):
            shift = -0.5 if clf == "LSTM-V" else 0.0
            rows.append(
                {
                    "subject": subject,
                    "classifier": clf,
                    "metrics": {
                        "instability": 1.0 + shift + 0.02 * rng.standard_normal()
                    },
                }
            )
    metrics_path = experiment.write_metrics_csv(tmp_path, rows)
    result = run_cli(
        ["stats", "--config", workdir["config"], "--out", str(tmp_path),
         "--metrics", str(metrics_path)]
    )
    assert result.exit_code == 0
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert "instability" in stats
    assert (tmp_path / "stats.csv").exists()
    assert (tmp_path / "metrics_boxplots.png").stat().st_size > 0
    assert "instability" in result.output


def test_stats_missing_metrics_exits_3(workdir, tmp_path):
    result = CliRunner().invoke(
        main, ["stats", "--config", workdir["config"], "--out", str(tmp_path / "none")]
    )
    assert result.exit_code == 3


def test_latent_requires_trained_backbone(workdir):
    result = CliRunner().invoke(
        main, ["latent", "--config", workdir["config"], "--out", workdir["out"]]
    )
    assert result.exit_code == 3  # LSTM-V was never trained in this workdir
