import csv
import io as _io
import subprocess
import sys

import numpy as np
import pytest

from saccade import cli, gradcheck, io
from saccade.config import RunConfig

TINY = dict(
    frames=5, image_height=16, image_width=16, crop_size=8, n_train=18, n_test=9, k=1,
    channels=4, head_channels=8, hallucinator_hidden=4, policy_hidden=16, classifier_hidden=8,
    epochs_features=2, epochs_hallucinator=2, epochs_spatial=2, epochs_temporal=2, batch_size=8,
)


def _config(tmp_path, **changes):
    path = tmp_path / "tiny.cfg"
    path.write_text(RunConfig(**{**TINY, **changes}).to_text())
    return str(path)


def _rows(path):
    return list(csv.DictReader(_io.StringIO(path.read_text())))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _config(root)
    out = root / "run"
    for phase in cli.PHASES:
        assert cli.main(["train", "--phase", phase, "--config", cfg, "--out", str(out)]) == 0
    return root, cfg, out


def test_phases_write_checkpoints_and_losses(trained):
    root, cfg, out = trained
    for phase in cli.PHASES:
        assert (out / f"{phase}.ckpt").exists()
    rows = _rows(out / "loss.csv")
    # temporal was the last phase: two terms per epoch
    assert [(r["epoch"], r["term"]) for r in rows] == [("1", "class"), ("1", "efficiency"), ("2", "class"), ("2", "efficiency")]
    assert (out / "config.txt").read_text() == RunConfig(**TINY).to_text()


def test_phase_order_is_enforced(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert cli.main(["train", "--phase", "spatial", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "needs the 'features' checkpoint" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_zero_epochs_gives_checkpoint_and_empty_loss(tmp_path):
    cfg = _config(tmp_path, epochs_features=0)
    out = tmp_path / "o"
    assert cli.main(["train", "--phase", "features", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "features.ckpt").exists()
    assert (out / "loss.csv").read_text() == "epoch,term,value\n"


def test_loss_rows_match_epochs_times_terms(tmp_path, trained):
    _, _, ckpts = trained
    cfg = _config(tmp_path, epochs_spatial=3)
    out = tmp_path / "o"
    assert cli.main(["train", "--phase", "spatial", "--config", cfg, "--out", str(out), "--checkpoints", str(ckpts)]) == 0
    rows = _rows(out / "loss.csv")
    assert len(rows) == 3 and {r["term"] for r in rows} == {"class"}


def test_checkpoint_mismatch_is_usage_error(tmp_path, trained, capsys):
    _, _, ckpts = trained
    cfg = _config(tmp_path, k=2)
    assert cli.main(["simulate", "--mode", "always_full", "--config", cfg, "--out", str(tmp_path / "o"), "--checkpoints", str(ckpts)]) == 2
    assert "do not match" in capsys.readouterr().err


def test_simulate_always_full_trace(trained, tmp_path):
    _, cfg, ckpts = trained
    out = tmp_path / "full"
    assert cli.main(["simulate", "--mode", "always_full", "--config", cfg, "--out", str(out), "--checkpoints", str(ckpts)]) == 0
    trace = _rows(out / "trace.csv")
    assert len(trace) == TINY["n_test"] * TINY["frames"]
    assert {r["status"] for r in trace} == {"FULL"}
    report = _rows(out / "report.csv")
    assert len(report) == TINY["n_test"]
    assert all(int(r["n_full"]) == TINY["frames"] for r in report)
    summary = {r["metric"]: r["value"] for r in _rows(out / "summary.csv")}
    assert float(summary["speedup_vs_always_full"]) == 1.0


def test_simulate_adaptive_report_is_consistent(trained, tmp_path):
    _, cfg, ckpts = trained
    out = tmp_path / "ad"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out), "--checkpoints", str(ckpts)]) == 0
    trace = _rows(out / "trace.csv")
    for r in _rows(out / "report.csv"):
        mine = [t for t in trace if t["seq"] == r["seq_id"]]
        assert mine[0]["status"] == "FULL" and mine[0]["ssim"] == ""
        counts = [sum(t["status"] == s for t in mine) for s in ("FULL", "PRESCAN", "SKIP")]
        assert counts == [int(r["n_full"]), int(r["n_pre"]), int(r["n_skip"])]
        assert int(r["frames"]) == sum(counts)


def test_single_step_horizon_never_skips(tmp_path):
    cfg = _config(tmp_path, max_skip=1, epochs_temporal=1)
    out = tmp_path / "o"
    assert cli.main(["train", "--phase", "all", "--config", cfg, "--out", str(out)]) == 0
    assert {r["term"].split(":")[0] for r in _rows(out / "loss.csv")} == set(cli.PHASES)
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert "SKIP" not in {r["status"] for r in _rows(out / "trace.csv")}


def test_reruns_and_jobs_are_byte_identical(trained, tmp_path):
    _, cfg, ckpts = trained
    outs = []
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
        out = tmp_path / name
        assert cli.main(["simulate", "--config", cfg, "--out", str(out), "--checkpoints", str(ckpts), "--jobs", jobs]) == 0
        outs.append(out)
    for f in ("report.csv", "trace.csv", "summary.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() == (outs[2] / f).read_bytes()


def test_training_is_reproducible(tmp_path, trained):
    _, cfg, ckpts = trained
    out = tmp_path / "again"
    assert cli.main(["train", "--phase", "features", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "features.ckpt").read_bytes() == (ckpts / "features.ckpt").read_bytes()


def test_gen_fixtures(tmp_path, trained):
    cfg = _config(tmp_path)
    out = tmp_path / "fx"
    assert cli.main(["gen-fixtures", "--config", cfg, "--out", str(out), "--n", "4"]) == 0
    rows = _rows(out / "manifest.csv")
    assert [r["label"] for r in rows] == ["0", "1", "2", "0"]
    video = io.read_fixture(out / rows[0]["video"])
    att = io.read_fixture(out / rows[0]["attention"])
    assert video.shape == (5, 3, 16, 16) and att.shape == (5, 4, 2, 2)
    _, _, ckpts = trained
    out2 = tmp_path / "fx2"
    assert cli.main(["gen-fixtures", "--config", cfg, "--out", str(out2), "--n", "2", "--checkpoints", str(ckpts)]) == 0
    assert io.read_fixture(out2 / rows[0]["attention"]).shape == (5, 4, 2, 2)
    assert cli.main(["gen-fixtures", "--config", cfg, "--out", str(tmp_path / "empty"), "--n", "0"]) == 0
    assert (tmp_path / "empty" / "manifest.csv").read_text() == "seq_id,seed,label,trajectory,video,attention\n"


def test_cost_report(capsys):
    assert cli.main(["cost-report", "--gflops", "8.64", "--top1", "27.52", "--ref-avg", "5.80", "--model-avg", "3.61"]) == 0
    rows = dict(r.split(",") for r in capsys.readouterr().out.strip().splitlines()[1:])
    assert float(rows["O_full-O_pre-O_rest"]) == 0
    assert int(rows["O_full"]) == int(rows["O_pre"]) + int(rows["O_rest"])
    assert int(rows["scaling_N64"]) < int(rows["scaling_N112"]) < int(rows["scaling_N224"])
    assert abs(float(rows["tradeoff"]) - 0.314) < 1e-3
    assert abs(float(rows["speedup"]) - 1.60) <= 0.02


def test_cost_report_custom_table(tmp_path, capsys):
    table = tmp_path / "t.txt"
    table.write_text("conv 3 4 3 1\nattention 4 4 3 1\nconv 4 6 3 1\nsplit 2\n")
    assert cli.main(["cost-report", "--table", str(table), "--sides", "8,16"]) == 0
    rows = dict(r.split(",") for r in capsys.readouterr().out.strip().splitlines()[1:])
    assert set(rows) >= {"scaling_N8", "scaling_N16"}
    table.write_text("conv 3 4\n")
    assert cli.main(["cost-report", "--table", str(table)]) == 2
    assert cli.main(["cost-report", "--gflops", "1.0"]) == 2


def test_gradcheck_table_and_corruption(capsys, tmp_path):
    assert cli.main(["gradcheck", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "gradcheck.csv")
    assert [r["op"] for r in rows] == gradcheck.registered_ops()
    assert {r["verdict"] for r in rows} == {"PASS"}
    capsys.readouterr()
    assert cli.main(["gradcheck", "--corrupt", "ssim"]) == 1
    out = capsys.readouterr().out
    assert "ssim" in out and "FAIL" in out


def test_usage_errors(tmp_path, capsys):
    assert cli.main([]) == 2
    assert cli.main(["train"]) == 2
    assert cli.main(["simulate", "--mode", "sometimes"]) == 2
    assert cli.main(["cost-report", "--config", str(tmp_path / "missing.cfg")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("warp = 9\n")
    assert cli.main(["cost-report", "--config", str(bad)]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert cli.main(["--help"]) == 0


def test_console_script_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "saccade.cli", "train", "--phase", "temporal", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "phase" in proc.stderr


def test_log_level_fallback(tmp_path):
    env = {"SACCADE_LOG": "loud", "PATH": ""}
    proc = subprocess.run([sys.executable, "-m", "saccade.cli", "cost-report"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "SACCADE_LOG" in proc.stderr
    assert np.isfinite(float(proc.stdout.splitlines()[1].split(",")[1]))
