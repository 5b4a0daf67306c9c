import subprocess
import sys

import pytest


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of every run."""
    rows = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if "test_acceptance" in getattr(rep, "nodeid", ""):
                name = rep.nodeid.split("::")[-1]
                rows.append((name, "PASS" if status == "passed" else "FAIL"))
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in rows:
            terminalreporter.write_line(f"{status}  {name}")


def run_cli(*args, cwd=None):
    """Run the installed CLI; returns CompletedProcess with captured output."""
    return subprocess.run(
        [sys.executable, "-m", "contourqa.cli", *[str(a) for a in args]],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


@pytest.fixture(scope="session")
def trained_pipeline(tmp_path_factory):
    """A small synthetic dataset with a trained checkpoint and calibration artifacts."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    steps = [
        ("synth", "--out", data, "--n", "160", "--seed", "5", "--raters"),
        (
            "train", "--data", data, "--out", root / "model.ckpt",
            "--epochs", "25", "--lr", "3e-3", "--milestones", "15,21", "--seed", "3",
        ),
        (
            "predict", "--data", data, "--checkpoint", root / "model.ckpt",
            "--out", root / "preds.csv", "--probs-out", root / "probs.csv",
            "--t", "12", "--seed", "9",
        ),
        (
            "calibrate", "--predictions", root / "preds.csv", "--labels-from", data,
            "--target", "0.85", "--out", root / "threshold.json",
            "--records-out", root / "calrecs.csv",
        ),
    ]
    for step in steps:
        proc = run_cli(*step)
        assert proc.returncode == 0, f"{step[0]} failed: {proc.stderr}"
    return root
