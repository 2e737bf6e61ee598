"""Command-line entry point: ``usgait <subcommand> [options]``.

Subcommands::

    synth     generate a synthetic cohort (frames, events, kinematics, manifest)
    extract   manifest -> per-trial feature CSVs and validation summary
    train     fit one model per subject, paradigm, feature set and target
    evaluate  cross-validated RMSE report, trajectory bands, swing-flexion check
    stats     repeated-measures ANOVA + Bonferroni posthoc from a report or design CSV
    report    render the RMSE tables with significance markers

Exit status: 0 on success, 1 on invalid input or configuration, 2 on a
runtime failure.  All outputs are written under ``--out``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import os
import sys
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gpr
from .gpr import Target
from .errors import InputError, UsgaitError
from .experiment import (
    ALL_STRIDES,
    STAIR_LABELS,
    ExperimentConfig,
    FeatureSet,
    Paradigm,
    cohort_report,
    cohort_swing_flexion,
    decimate_groups,
    prepare_subject,
    read_report_csv,
    render_report,
    run_cohort,
    trajectory_bands,
    write_report_csv,
)
from .features import FeatureConfig, Standardization, trial_features, write_feature_csv
from .frames import Task, read_manifest, validate_trial
from .gait import write_bands_csv
from .stats import (
    RmDesign,
    bonferroni_posthoc,
    read_design_csv,
    rm_two_way_anova,
    write_anova_csv,
    write_design_csv,
    write_posthoc_csv,
)
from .synth import SynthConfig, generate_cohort

logger = logging.getLogger("usgait")

SUBCOMMANDS = ("synth", "extract", "train", "evaluate", "stats", "report")


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    help: str


# every tunable, with its default; config files and --set use these names
SCHEMA: dict[str, Key] = {
    "seed": Key(int, 0, "master seed for generation and hyperparameter restarts"),
    "synth.subjects": Key(int, 7, "number of synthetic subjects"),
    "synth.strides_level": Key(int, 41, "level treadmill strides per subject"),
    "synth.strides_incline": Key(int, 38, "incline treadmill strides per subject"),
    "synth.strides_decline": Key(int, 42, "decline treadmill strides per subject"),
    "synth.stair_trials": Key(int, 5, "trials per stair task"),
    "synth.stair_steady_ascent": Key(int, 13, "steady ascent strides per subject"),
    "synth.stair_steady_descent": Key(int, 15, "steady descent strides per subject"),
    "synth.frame_rate_hz": Key(float, 20.0, "ultrasound frame rate"),
    "synth.kinematics_rate_hz": Key(float, 100.0, "kinematics sampling rate"),
    "synth.width_px": Key(int, 32, "frame width"),
    "synth.height_px": Key(int, 48, "frame height (depth)"),
    "synth.pixel_spacing_mm": Key(float, 0.5, "pixel spacing"),
    "synth.noise_sd_intensity": Key(float, 2.0, "pixel noise SD (8-bit units)"),
    "synth.kinematics_noise_sd_deg": Key(float, 1.0, "angle label noise SD"),
    "synth.velocity_noise_per_deg": Key(float, 10.0, "velocity noise SD per degree of angle noise"),
    "synth.stride_period_jitter": Key(float, 0.03, "relative SD of stride periods"),
    "synth.amplitude_jitter": Key(float, 0.03, "relative SD of stride amplitudes"),
    "features.kernel_size_mm": Key(float, 3.0, "square kernel edge"),
    "experiment.treadmill_holdout_fraction": Key(float, 0.20, "held-out share of treadmill strides"),
    "experiment.paradigms": Key(str, "task_specific,task_invariant", "paradigms to run"),
    "experiment.feature_sets": Key(str, "intensity,intensity_plus_temporal", "feature sets to run"),
    "experiment.targets": Key(str, "knee_angle,knee_velocity", "targets to run"),
    "experiment.kernel_family": Key(str, "rational_quadratic", "rational_quadratic or polynomial_degree2"),
    "experiment.max_train": Key(int, 2000, "training-row cap per fit (0 disables)"),
    "experiment.hyper_rows": Key(int, 300, "rows used by the likelihood search"),
    "experiment.hyper_mode": Key(str, "per_fold", "per_fold or first_fold"),
    "experiment.restarts": Key(int, 3, "likelihood search starting points"),
    "experiment.max_iter": Key(int, 200, "simplex iterations per start"),
    "experiment.rel_tol": Key(float, 1e-6, "relative LML tolerance"),
    "stats.alpha": Key(float, 0.05, "significance level (tier a / c)"),
    "stats.alpha_strict": Key(float, 0.01, "strict level (tier b / d)"),
    "stats.family_size": Key(int, 6, "Bonferroni family size"),
}


def _coerce(key: str, raw: str, source: str):
    spec = SCHEMA.get(key)
    if spec is None:
        raise InputError(f"{source}: unknown key {key!r}")
    try:
        return spec.type(raw.strip())
    except ValueError:
        raise InputError(f"{source}: {key} expects {spec.type.__name__}, got {raw!r}") from None


def load_config(path=None, overrides=(), seed=None) -> dict:
    """Defaults, then the key=value file, then ``--set`` overrides, then ``--seed``."""
    cfg = {k: v.default for k, v in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                           comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            parser.read_string("[config]\n" + text, source=str(path))
        except configparser.Error as exc:
            raise InputError(f"{path}: {exc}") from None
        for k, v in parser["config"].items():
            cfg[k] = _coerce(k, v, str(path))
    for item in overrides:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = _coerce(k.strip(), v, "--set")
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(
        subjects=cfg["synth.subjects"],
        strides_per_task={Task.LEVEL: cfg["synth.strides_level"],
                          Task.INCLINE: cfg["synth.strides_incline"],
                          Task.DECLINE: cfg["synth.strides_decline"]},
        stair_trials=cfg["synth.stair_trials"],
        stair_steady_strides={Task.STAIR_ASCENT: cfg["synth.stair_steady_ascent"],
                              Task.STAIR_DESCENT: cfg["synth.stair_steady_descent"]},
        frame_rate_hz=cfg["synth.frame_rate_hz"],
        kinematics_rate_hz=cfg["synth.kinematics_rate_hz"],
        width_px=cfg["synth.width_px"],
        height_px=cfg["synth.height_px"],
        pixel_spacing_mm=cfg["synth.pixel_spacing_mm"],
        noise_sd_intensity=cfg["synth.noise_sd_intensity"],
        kinematics_noise_sd_deg=cfg["synth.kinematics_noise_sd_deg"],
        velocity_noise_per_deg=cfg["synth.velocity_noise_per_deg"],
        stride_period_jitter=cfg["synth.stride_period_jitter"],
        amplitude_jitter=cfg["synth.amplitude_jitter"],
        seed=cfg["seed"],
    )


def _names(raw: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in raw.split(",") if p.strip())


def experiment_config(cfg: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig(
            paradigms=_names(cfg["experiment.paradigms"]),
            feature_sets=_names(cfg["experiment.feature_sets"]),
            targets=_names(cfg["experiment.targets"]),
            treadmill_holdout_fraction=cfg["experiment.treadmill_holdout_fraction"],
            seed=cfg["seed"],
            kernel_family=cfg["experiment.kernel_family"],
            kernel_size_mm=cfg["features.kernel_size_mm"],
            max_train=cfg["experiment.max_train"] or None,
            hyper_rows=cfg["experiment.hyper_rows"],
            hyper_mode=cfg["experiment.hyper_mode"],
            restarts=cfg["experiment.restarts"],
            max_iter=cfg["experiment.max_iter"],
            rel_tol=cfg["experiment.rel_tol"],
        )
    except ValueError as exc:  # bad enum names
        raise InputError(f"experiment config: {exc}") from None


# ----------------------------------------------------------- subcommands


def _load_subjects(manifest, kernel_size_mm: float):
    entries = read_manifest(manifest)
    by_subject = defaultdict(list)
    for e in entries:
        trial = e.load()
        report = validate_trial(trial)
        if not report.passed:
            raise InputError(f"{e.frames_path}: " + "; ".join(report.violations))
        by_subject[e.subject_id].append(trial)
    return [prepare_subject(by_subject[s], kernel_size_mm) for s in sorted(by_subject)]


def cmd_synth(args, cfg, out: Path) -> None:
    entries = generate_cohort(synth_config(cfg), out)
    print(f"wrote {len(entries)} trials for {cfg['synth.subjects']} subjects to {out}")


def cmd_extract(args, cfg, out: Path) -> None:
    fc = FeatureConfig(cfg["features.kernel_size_mm"], include_temporal=True)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for e in read_manifest(args.manifest):
        trial = e.load()
        report = validate_trial(trial)
        fm, _ = trial_features(trial.frames, fc)
        write_feature_csv(feat_dir / f"{e.subject_id}_{e.task.value}_{e.trial_index}.csv", fm)
        rows.append([trial.key, len(trial.frames), fm.samples, fm.dims,
                     "; ".join(report.violations)])
    with open(out / "extract_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "frames", "feature_rows", "dims", "violations"])
        w.writerows(rows)
    print(f"wrote {len(rows)} feature files to {feat_dir}")


def cmd_train(args, cfg, out: Path) -> None:
    ec = experiment_config(cfg)
    model_dir = out / "models"
    model_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for subject in _load_subjects(args.manifest, ec.kernel_size_mm):
        for paradigm in ec.paradigms:
            scopes = ([[t] for t in subject.tasks] if paradigm is Paradigm.TASK_SPECIFIC
                      else [subject.tasks])
            for tasks in scopes:
                trials = [t for t in subject.trials if t.task in tasks]
                groups, offset = [], 0
                for t in trials:
                    for s in t.strides:
                        groups.append(offset + s.sample_rows)
                    offset += t.features.shape[0]
                x_all = np.vstack([t.features for t in trials])
                keep = decimate_groups(groups, ec.max_train)
                hyp = decimate_groups(groups, ec.hyper_rows)
                scope = tasks[0].value if len(tasks) == 1 else "all"
                for fs in ec.feature_sets:
                    cols = trials[0].columns(fs)
                    x = x_all[:, cols]
                    st = Standardization.fit(x[keep])
                    for target in ec.targets:
                        y = np.concatenate([t.target(target) for t in trials])
                        spec = gpr.optimize_hyperparameters(st.apply(x[hyp]), y[hyp],
                                                            ec.kernel_family, ec.optimizer())
                        model = gpr.fit(x[keep], y[keep], spec, target, input_scaling=st)
                        name = f"{subject.subject_id}_{paradigm.value}_{scope}_{fs.value}_{target.value}.usgp"
                        gpr.save_model(model, model_dir / name)
                        count += 1
    print(f"wrote {count} models to {model_dir}")


def cmd_evaluate(args, cfg, out: Path) -> None:
    ec = experiment_config(cfg)
    subjects = _load_subjects(args.manifest, ec.kernel_size_mm)
    outcomes = run_cohort(subjects, ec, args.workers)
    report = cohort_report(outcomes)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / "report.csv", report)
    failed = sum(1 for r in report.rows if r.status == "failed")

    bands = {}
    for fs in ec.feature_sets:
        for target in ec.targets:
            bands.update(trajectory_bands(outcomes, fs, target))
    write_bands_csv(out / "trajectories.csv", bands)

    lines = ["paradigm,feature_set,task,mean_peak_deg,threshold_deg,strides,pass"]
    swing = None
    if Target.KNEE_ANGLE in ec.targets:
        for paradigm in ec.paradigms:
            for fs in ec.feature_sets:
                try:
                    rep = cohort_swing_flexion(outcomes, paradigm, fs)
                except InputError:
                    continue
                if paradigm is Paradigm.TASK_SPECIFIC and fs is FeatureSet.INTENSITY_PLUS_TEMPORAL:
                    swing = rep
                for e in rep.entries:
                    lines.append(f"{paradigm.value},{fs.value},{e.task.value},{e.mean_peak_deg:.6f},"
                                 f"{e.threshold_deg},{e.strides},{int(e.passed)}")
    (out / "swing_flexion.csv").write_text("\n".join(lines) + "\n")
    (out / "tables.txt").write_text(
        render_report(report, swing, cfg["stats.alpha"], cfg["stats.alpha_strict"]))
    print(f"wrote report ({len(report.rows)} rows, {failed} failed) to {out}")


def report_design(report, target, task=None, label=ALL_STRIDES) -> RmDesign:
    """Subject-mean design for one task (or the mean over tasks when ``task`` is None)."""
    means = report.subject_means()
    cells = defaultdict(list)
    for (s, t, p, f, tgt, lab), (m, _, _) in means.items():
        if tgt.value != target or lab != label or (task is not None and t is not task):
            continue
        cells[(s, p.value, f.value)].append(m)
    return RmDesign.from_records(
        (s, p, f, float(np.mean(v))) for (s, p, f), v in sorted(cells.items()))


def _write_stats(out: Path, name: str, design: RmDesign, cfg: dict) -> None:
    write_design_csv(out / f"design_{name}.csv", design)
    write_anova_csv(out / f"anova_{name}.csv", rm_two_way_anova(design))
    write_posthoc_csv(out / f"posthoc_{name}.csv",
                      bonferroni_posthoc(design, family_size=cfg["stats.family_size"],
                                         alpha=cfg["stats.alpha"], strict=cfg["stats.alpha_strict"]))


def cmd_stats(args, cfg, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if args.design:
        _write_stats(out, Path(args.design).stem, read_design_csv(args.design), cfg)
        print(f"wrote stats for {args.design} to {out}")
        return
    report = read_report_csv(args.report)
    written = 0
    targets = sorted({r.target.value for r in report.rows})
    for target in targets:
        designs = [("overall", None, ALL_STRIDES)]
        designs += [(t.value, t, ALL_STRIDES) for t in Task]
        designs += [(f"{t.value}_{lab.value}", t, lab.value)
                    for t in Task if t.is_stair for lab in STAIR_LABELS]
        for name, task, label in designs:
            try:
                design = report_design(report, target, task, label)
            except InputError as exc:
                logger.info("skipping %s/%s: %s", target, name, exc)
                continue
            _write_stats(out, f"{target}_{name}", design, cfg)
            written += 1
    if not written:
        raise InputError(f"{args.report}: no complete subject x paradigm x feature-set design")
    print(f"wrote {written} ANOVA/posthoc sets to {out}")


def cmd_report(args, cfg, out: Path) -> None:
    report = read_report_csv(args.report)
    text = render_report(report, None, cfg["stats.alpha"], cfg["stats.alpha_strict"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "tables.txt").write_text(text)
    sys.stdout.write(text)


# ------------------------------------------------------------------ main


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors: exit 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="parallel subjects (default: available cores)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="usgait", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    for name, helptext in (("extract", "manifest -> feature CSVs"),
                           ("train", "fit and save models"),
                           ("evaluate", "cross-validated RMSE report")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--manifest", required=True, help="cohort manifest CSV")
    p = sub.add_parser("stats", parents=[common], help="ANOVA and posthoc tests")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--report", help="report CSV from evaluate")
    src.add_argument("--design", help="design CSV (subject,paradigm,feature_set,value)")
    p = sub.add_parser("report", parents=[common], help="render RMSE tables")
    p.add_argument("--report", required=True, help="report CSV from evaluate")
    return parser


_COMMANDS = {
    "synth": cmd_synth, "extract": cmd_extract, "train": cmd_train,
    "evaluate": cmd_evaluate, "stats": cmd_stats, "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise InputError("--workers must be >= 1")
        cfg = load_config(args.config, args.set, args.seed)
        for attr in ("manifest", "report", "design"):
            path = getattr(args, attr, None)
            if path is not None and not Path(path).is_file():
                raise InputError(f"--{attr}: no such file {path}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](args, cfg, out)
    except (InputError, FileNotFoundError) as exc:
        print(f"usgait {args.command}: invalid input: {exc}", file=sys.stderr)
        return 1
    except (UsgaitError, OSError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"usgait {args.command}: failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
