import csv
import hashlib
import subprocess
import sys

import numpy as np
import pytest

from usgait.cli import SCHEMA, load_config, main
from usgait.experiment import ALL_STRIDES, read_report_csv
from usgait.gpr import load_model, predict_mean

SMALL_CFG = """\
# small cohort for quick runs
synth.subjects = 2
synth.strides_level = 8
synth.strides_incline = 7
synth.strides_decline = 8
synth.stair_trials = 2
synth.stair_steady_ascent = 3
synth.stair_steady_descent = 3
experiment.hyper_mode = first_fold
experiment.restarts = 1
experiment.max_iter = 40
experiment.hyper_rows = 60
experiment.max_train = 300
"""


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _run(*argv):
    return subprocess.run([sys.executable, "-m", "usgait", *argv], capture_output=True, text=True)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL_CFG)
    assert main(["synth", "--config", str(cfg), "--out", str(root / "cohort")]) == 0
    assert main(["evaluate", "--config", str(cfg), "--manifest", str(root / "cohort/manifest.csv"),
                 "--out", str(root / "eval"), "--workers", "1"]) == 0
    return root, cfg


def test_synth_is_deterministic(pipeline, tmp_path):
    root, cfg = pipeline
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    assert _tree_digest(tmp_path / "again") == _tree_digest(root / "cohort")
    assert main(["synth", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "other")]) == 0
    assert _tree_digest(tmp_path / "other") != _tree_digest(root / "cohort")


def test_evaluate_outputs_complete(pipeline):
    root, _ = pipeline
    report = read_report_csv(root / "eval/report.csv")
    pooled = {(r.subject_id, r.task, r.paradigm, r.feature_set, r.target)
              for r in report.rows if r.stride_label == ALL_STRIDES and r.status == "ok"}
    assert len(pooled) == 2 * 5 * 2 * 2 * 2
    assert (root / "eval/tables.txt").read_text().startswith("TABLE I.")
    with open(root / "eval/trajectories.csv") as fh:
        series = {row["series"] for row in csv.DictReader(fh)}
    assert "stair_ascent/task_invariant/intensity/knee_angle/transition_predicted" in series
    swing = (root / "eval/swing_flexion.csv").read_text().splitlines()
    assert swing[0].startswith("paradigm,feature_set,task,mean_peak_deg")
    assert len(swing) == 1 + 2 * 2 * 2


def test_extract_and_train(pipeline, tmp_path):
    root, cfg = pipeline
    manifest = str(root / "cohort/manifest.csv")
    assert main(["extract", "--config", str(cfg), "--manifest", manifest, "--out", str(tmp_path)]) == 0
    assert len(list((tmp_path / "features").glob("*.csv"))) == 2 * (3 + 2 * 2)
    assert main(["train", "--config", str(cfg), "--manifest", manifest, "--out", str(tmp_path),
                 "--set", "experiment.paradigms=task_invariant",
                 "--set", "experiment.targets=knee_angle"]) == 0
    models = sorted((tmp_path / "models").glob("*.usgp"))
    assert len(models) == 2 * 2  # subjects in the manifest x feature sets
    m = load_model(models[0])
    assert np.all(np.isfinite(predict_mean(m, np.zeros((1, m.dims)))))


def test_stats_and_report(pipeline, tmp_path):
    root, cfg = pipeline
    rep = str(root / "eval/report.csv")
    assert main(["stats", "--report", rep, "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s/anova_knee_angle_overall.csv").exists()
    assert (tmp_path / "s/posthoc_knee_velocity_stair_ascent_walk_to_stair.csv").exists()
    assert main(["stats", "--design", str(tmp_path / "s/design_knee_angle_level.csv"),
                 "--out", str(tmp_path / "d")]) == 0
    lines = (tmp_path / "d/anova_design_knee_angle_level.csv").read_text().splitlines()
    assert lines[0] == "effect,ss,dof,F,p" and len(lines) == 4
    assert main(["report", "--report", rep, "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r/tables.txt").read_text() == (root / "eval/tables.txt").read_text().split(
        "SWING FLEXION")[0].rstrip("\n") + "\n"


def test_exit_codes(tmp_path):
    assert _run("synth", "--out", str(tmp_path), "--bogus").returncode == 1
    assert _run("nosuch").returncode == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("synth.no_such_key = 3\n")
    r = _run("synth", "--config", str(bad), "--out", str(tmp_path))
    assert r.returncode == 1 and "synth.no_such_key" in r.stderr
    bad.write_text("synth.subjects = many\n")
    assert _run("synth", "--config", str(bad), "--out", str(tmp_path)).returncode == 1
    r = _run("evaluate", "--manifest", str(tmp_path / "missing.csv"), "--out", str(tmp_path))
    assert r.returncode == 1
    assert _run("synth", "--out", str(tmp_path), "--set", "synth.subjects=0").returncode == 1


def test_config_precedence(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 3\nsynth.subjects = 4\n")
    cfg = load_config(str(p), ["synth.subjects=2"], seed=9)
    assert cfg["synth.subjects"] == 2 and cfg["seed"] == 9
    assert cfg["experiment.max_train"] == SCHEMA["experiment.max_train"].default == 2000
