"""Cross-validated task-specific vs task-invariant GPR experiments.

A subject's trials are turned into analysis rows (frames with synchronized
kinematics and a temporal feature, i.e. every retained frame but the first),
grouped by stride.  Treadmill tasks hold out blocks of consecutive strides;
stair tasks hold out whole trials.  The task-invariant model of round ``i``
trains on the union of every task's ``i``-th fold training strides (shorter
fold lists cycle), and each task fold is evaluated exactly once.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy import linalg

from . import gpr
from .errors import (
    EmptyInput,
    IncompleteDesign,
    InputError,
    LengthMismatch,
    TooFewStrides,
    TooFewTrials,
    UsgaitError,
)
from .features import FeatureConfig, Standardization, trial_features
from .frames import STAIR_TASKS, TREADMILL_TASKS, Task, TrialRecord, synchronize_kinematics
from .gait import (
    PERCENT_GRID,
    NormalizedStride,
    Stride,
    StrideLabel,
    TrajectoryBand,
    normalize_stride,
    segment_strides,
    trajectory_band,
    transition_triplets,
    triplet_band,
)
from .gpr import KernelFamily, KernelSpec, OptimizerConfig, Target
from .stats import RmDesign, bonferroni_posthoc, rm_two_way_anova

logger = logging.getLogger(__name__)

SWING_FLEXION_THRESHOLDS = {Task.STAIR_ASCENT: 71.9, Task.STAIR_DESCENT: 70.5}
# published cohort averages, shown next to ours in the rendered report
REFERENCE_OVERALL = {
    Target.KNEE_ANGLE: {"task_invariant": 7.06, "task_specific": 6.00},
    Target.KNEE_VELOCITY: {"task_invariant": 53.1, "task_specific": 51.8},
}
ALL_STRIDES = "all"


class Paradigm(str, enum.Enum):
    TASK_SPECIFIC = "task_specific"
    TASK_INVARIANT = "task_invariant"


class FeatureSet(str, enum.Enum):
    INTENSITY = "intensity"
    INTENSITY_PLUS_TEMPORAL = "intensity_plus_temporal"


class HyperMode(str, enum.Enum):
    PER_FOLD = "per_fold"
    FIRST_FOLD = "first_fold"


@dataclass(frozen=True)
class ExperimentConfig:
    paradigms: tuple[Paradigm, ...] = tuple(Paradigm)
    feature_sets: tuple[FeatureSet, ...] = tuple(FeatureSet)
    targets: tuple[Target, ...] = tuple(Target)
    treadmill_holdout_fraction: float = 0.20
    seed: int = 0
    kernel_family: KernelFamily = KernelFamily.RATIONAL_QUADRATIC
    kernel_size_mm: float = 3.0
    #: training rows per fit; ``None`` or 0 disables the cap
    max_train: int | None = 2000
    #: rows used for the likelihood search (fits then use all capped rows)
    hyper_rows: int = 300
    hyper_mode: HyperMode = HyperMode.PER_FOLD
    restarts: int = 3
    max_iter: int = 200
    rel_tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.treadmill_holdout_fraction <= 0.5:
            raise InputError("treadmill_holdout_fraction must be in (0, 0.5]")
        for name, enum_type in (("paradigms", Paradigm), ("feature_sets", FeatureSet),
                                ("targets", Target)):
            vals = tuple(enum_type(v) for v in getattr(self, name))
            if not vals:
                raise InputError(f"{name} must not be empty")
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "kernel_family", KernelFamily(self.kernel_family))
        object.__setattr__(self, "hyper_mode", HyperMode(self.hyper_mode))
        if self.max_train is not None and self.max_train < 0:
            raise InputError("max_train must be >= 0")
        if self.hyper_rows < 5:
            raise InputError("hyper_rows must be >= 5")

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(restarts=self.restarts, max_iter=self.max_iter,
                               rel_tol=self.rel_tol, seed=self.seed)


# ------------------------------------------------------------------ folds


@dataclass(frozen=True)
class CvFold:
    index: int
    held_out: tuple
    train: tuple

    @property
    def held_out_set(self) -> frozenset:
        return frozenset(self.held_out)

    @property
    def train_set(self) -> frozenset:
        return frozenset(self.train)


def _ident(s) -> Hashable:
    return s.stride_id if isinstance(s, Stride) else s


def treadmill_block_bounds(count: int, holdout_fraction: float) -> list[tuple[int, int]]:
    """``[start, stop)`` of consecutive held-out blocks.

    Block size ``B = round(fraction * count)`` (halves round up), at least 1;
    a trailing block shorter than ``B / 2`` joins the previous one.
    """
    if count < 5:
        raise TooFewStrides(f"{count} stride(s); leave-N-strides-out needs at least 5")
    if not 0.0 < holdout_fraction <= 0.5:
        raise InputError("holdout fraction must be in (0, 0.5]")
    size = max(1, int(math.floor(holdout_fraction * count + 0.5)))
    bounds = [(s, min(s + size, count)) for s in range(0, count, size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < size / 2:
        last = bounds.pop()
        bounds[-1] = (bounds[-1][0], last[1])
    return bounds


def make_treadmill_folds(strides: Sequence, holdout_fraction: float = 0.20) -> list[CvFold]:
    """Leave-N-consecutive-strides-out folds over temporally ordered strides."""
    ids = [_ident(s) for s in strides]
    folds = []
    for i, (a, b) in enumerate(treadmill_block_bounds(len(ids), holdout_fraction)):
        folds.append(CvFold(i, tuple(ids[a:b]), tuple(ids[:a] + ids[b:])))
    return folds


def make_stair_folds(trials: Sequence) -> list[CvFold]:
    """Leave-one-trial-out folds.

    ``trials`` holds either :class:`TrialRecord` objects (segmented here) or
    per-trial stride sequences.
    """
    if len(trials) < 2:
        raise TooFewTrials(f"{len(trials)} trial(s); leave-one-trial-out needs at least 2")
    groups = []
    for t in trials:
        strides = segment_strides(t) if isinstance(t, TrialRecord) else t
        groups.append([_ident(s) for s in strides])
    folds = []
    for i, held in enumerate(groups):
        train = [s for j, g in enumerate(groups) if j != i for s in g]
        folds.append(CvFold(i, tuple(held), tuple(train)))
    return folds


# ------------------------------------------------------------ subject data


@dataclass(frozen=True)
class TrialData:
    """Analysis rows of one trial; every row belongs to exactly one stride."""

    key: str
    subject_id: str
    task: Task
    trial_index: int
    features: np.ndarray  # (rows, 2 * n_kernels): intensity then temporal
    n_kernels: int
    timestamps_ms: np.ndarray
    angle_deg: np.ndarray
    velocity_deg_s: np.ndarray
    strides: tuple[Stride, ...]
    row_label: np.ndarray  # StrideLabel value per row

    def target(self, target: Target) -> np.ndarray:
        return self.angle_deg if Target(target) is Target.KNEE_ANGLE else self.velocity_deg_s

    def columns(self, feature_set: FeatureSet) -> slice:
        if FeatureSet(feature_set) is FeatureSet.INTENSITY:
            return slice(0, self.n_kernels)
        return slice(0, 2 * self.n_kernels)


def prepare_trial(trial: TrialRecord, kernel_size_mm: float = 3.0) -> TrialData:
    """Features, synchronized targets and stride membership of a trial."""
    fm, _ = trial_features(trial.frames, FeatureConfig(kernel_size_mm, include_temporal=True))
    sync = synchronize_kinematics(trial)
    pos = {int(f): i for i, f in enumerate(sync.frame_indices)}
    keep = [r for r, f in enumerate(fm.frame_indices) if int(f) in pos]
    srow = np.array([pos[int(fm.frame_indices[r])] for r in keep], dtype=np.int64)
    ts = sync.timestamps_ms[srow]
    strides = segment_strides(trial, ts)
    if not strides:
        raise EmptyInput(f"{trial.key}: no strides with analysis rows")
    rows = np.concatenate([s.sample_rows for s in strides])
    remap = np.full(len(keep), -1, dtype=np.int64)
    remap[rows] = np.arange(rows.size)
    new_strides = tuple(
        Stride(s.subject_id, s.task, s.trial_index, s.number, s.start_ms, s.end_ms, s.label,
               remap[s.sample_rows]) for s in strides
    )
    labels = np.concatenate([[s.label.value] * len(s) for s in strides])
    feats = fm.values[np.asarray(keep, dtype=np.int64)[rows]]
    sel = srow[rows]
    return TrialData(trial.key, trial.subject_id, trial.task, trial.trial_index, feats,
                     fm.n_kernels, ts[rows], sync.angle_deg[sel], sync.velocity_deg_s[sel],
                     new_strides, labels)


@dataclass(frozen=True)
class SubjectData:
    subject_id: str
    trials: tuple[TrialData, ...]
    _index: dict | None = field(default=None, init=False, repr=False, compare=False)

    def stride_index(self) -> dict:
        """stride id -> (trial, stride)."""
        if self._index is None:
            idx = {s.stride_id: (t, s) for t in self.trials for s in t.strides}
            object.__setattr__(self, "_index", idx)
        return self._index

    def task_trials(self, task: Task) -> list[TrialData]:
        return sorted((t for t in self.trials if t.task is Task(task)), key=lambda t: t.trial_index)

    @property
    def tasks(self) -> list[Task]:
        present = {t.task for t in self.trials}
        return [t for t in Task if t in present]


def prepare_subject(trials: Iterable[TrialRecord], kernel_size_mm: float = 3.0) -> SubjectData:
    trials = list(trials)
    if not trials:
        raise EmptyInput("no trials")
    sids = {t.subject_id for t in trials}
    if len(sids) != 1:
        raise InputError(f"trials from several subjects: {sorted(sids)}")
    return SubjectData(sids.pop(), tuple(prepare_trial(t, kernel_size_mm) for t in trials))


def task_folds(subject: SubjectData, task: Task, holdout_fraction: float) -> list[CvFold]:
    trials = subject.task_trials(task)
    if not trials:
        raise EmptyInput(f"{subject.subject_id}: no {Task(task).value} trials")
    if Task(task).is_stair:
        return make_stair_folds([t.strides for t in trials])
    if len(trials) != 1:
        raise InputError(f"{subject.subject_id}: expected one {task.value} trial, got {len(trials)}")
    return make_treadmill_folds(trials[0].strides, holdout_fraction)


# -------------------------------------------------------------- the plan


@dataclass(frozen=True)
class EvalTarget:
    task: Task
    fold: int
    held_out: tuple


@dataclass(frozen=True)
class TrainingUnit:
    """One model family to fit: its training strides and what it is tested on."""

    paradigm: Paradigm
    task: Task | None  # None for the pooled task-invariant model
    round: int
    train: tuple
    evaluations: tuple[EvalTarget, ...]


def training_plan(subject: SubjectData, config: ExperimentConfig) -> list[TrainingUnit]:
    tasks = subject.tasks
    folds = {t: task_folds(subject, t, config.treadmill_holdout_fraction) for t in tasks}
    plan = []
    if Paradigm.TASK_SPECIFIC in config.paradigms:
        for t in tasks:
            for f in folds[t]:
                plan.append(TrainingUnit(Paradigm.TASK_SPECIFIC, t, f.index, f.train,
                                         (EvalTarget(t, f.index, f.held_out),)))
    if Paradigm.TASK_INVARIANT in config.paradigms:
        missing = [t for t in Task if t not in folds]
        if missing:
            raise InputError(f"{subject.subject_id}: task-invariant training needs all tasks; "
                             f"missing {[m.value for m in missing]}")
        rounds = max(len(f) for f in folds.values())
        for i in range(rounds):
            train, evals = [], []
            for t in tasks:
                f = folds[t][i % len(folds[t])]
                train.extend(f.train)
                if i < len(folds[t]):
                    evals.append(EvalTarget(t, f.index, f.held_out))
            plan.append(TrainingUnit(Paradigm.TASK_INVARIANT, None, i, tuple(train), tuple(evals)))
    return plan


# ------------------------------------------------------------- training


def decimate_groups(groups: Sequence[np.ndarray], max_rows: int | None) -> np.ndarray:
    """Keep every ``k``-th row of each group, smallest ``k`` fitting ``max_rows``."""
    total = sum(len(g) for g in groups)
    if not max_rows or total <= max_rows:
        return np.concatenate(groups) if groups else np.zeros(0, dtype=np.int64)
    k = max(2, total // max_rows)
    while sum(-(-len(g) // k) for g in groups) > max_rows:
        k += 1
    return np.concatenate([g[::k] for g in groups])


@dataclass
class _Rows:
    x: np.ndarray
    angle: np.ndarray
    velocity: np.ndarray
    groups: list[np.ndarray]


def _gather(subject: SubjectData, stride_ids: Iterable) -> _Rows:
    index = _stride_index(subject)
    xs, angs, vels, groups = [], [], [], []
    offset = 0
    for sid in stride_ids:
        trial, stride = index[sid]
        r = stride.sample_rows
        xs.append(trial.features[r])
        angs.append(trial.angle_deg[r])
        vels.append(trial.velocity_deg_s[r])
        groups.append(np.arange(offset, offset + r.size))
        offset += r.size
    if not xs:
        raise EmptyInput("no training strides")
    return _Rows(np.vstack(xs), np.concatenate(angs), np.concatenate(vels), groups)


def _stride_index(subject: SubjectData) -> dict:
    return subject.stride_index()


@dataclass(frozen=True)
class FoldResult:
    subject_id: str
    task: Task
    paradigm: Paradigm
    feature_set: FeatureSet
    target: Target
    fold: int
    trial_keys: tuple[str, ...]
    held_out: tuple
    n_train_rows: int
    n_fit_rows: int
    kernel: KernelSpec | None
    predicted: np.ndarray | None = field(default=None, repr=False)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _fit_cell(rows: _Rows, cols: slice, target: Target, fit_idx: np.ndarray,
              config: ExperimentConfig, spec: KernelSpec | None):
    y = rows.angle if target is Target.KNEE_ANGLE else rows.velocity
    x = rows.x[fit_idx, cols]
    st = Standardization.fit(x)
    if spec is None:
        hyp = decimate_groups([g for g in _sub_groups(rows.groups, fit_idx)], config.hyper_rows)
        spec = gpr.optimize_hyperparameters(st.apply(rows.x[hyp, cols]), y[hyp],
                                            config.kernel_family, config.optimizer())
    model = gpr.fit(x, y[fit_idx], spec, target, input_scaling=st)
    return model, spec


def _sub_groups(groups, fit_idx):
    """Groups restricted to the rows kept for fitting, as absolute row ids."""
    kept = np.zeros(sum(len(g) for g in groups), dtype=bool)
    kept[fit_idx] = True
    return [g[kept[g]] for g in groups if kept[g].any()]


def run_experiment(subject: SubjectData, config: ExperimentConfig = ExperimentConfig()
                   ) -> list[FoldResult]:
    """Fit and evaluate every (paradigm, fold, feature set, target) cell."""
    index = _stride_index(subject)
    results = []
    cache: dict[tuple, KernelSpec] = {}
    for unit in training_plan(subject, config):
        rows = _gather(subject, unit.train)
        fit_idx = decimate_groups(rows.groups, config.max_train)
        for fs in config.feature_sets:
            cols = subject.trials[0].columns(fs)
            for target in config.targets:
                ckey = (unit.paradigm, unit.task, fs, target)
                reuse = cache.get(ckey) if config.hyper_mode is HyperMode.FIRST_FOLD else None
                try:
                    model, spec = _fit_cell(rows, cols, target, fit_idx, config, reuse)
                    cache.setdefault(ckey, spec)
                    error = None
                except (UsgaitError, linalg.LinAlgError, FloatingPointError) as exc:
                    logger.warning("%s %s round %d %s/%s failed: %s", subject.subject_id,
                                   unit.paradigm.value, unit.round, fs.value, target.value, exc)
                    model, spec, error = None, None, f"{type(exc).__name__}: {exc}"
                for ev in unit.evaluations:
                    trials = _held_trials(index, ev.held_out)
                    pred = None
                    if model is not None:
                        q = np.vstack([index[s][0].features[index[s][1].sample_rows, cols]
                                       for s in ev.held_out])
                        pred = gpr.predict(model, q)
                    results.append(FoldResult(
                        subject.subject_id, ev.task, unit.paradigm, fs, target, ev.fold,
                        trials, ev.held_out, int(rows.x.shape[0]), int(fit_idx.size), spec,
                        pred, error))
    return results


def _held_trials(index, held_out) -> tuple[str, ...]:
    keys = []
    for s in held_out:
        k = index[s][0].key
        if k not in keys:
            keys.append(k)
    return tuple(keys)


def measured_for(subject: SubjectData, result: FoldResult) -> tuple[np.ndarray, np.ndarray]:
    """Measured target and stride label of every held-out row, in prediction order."""
    index = _stride_index(subject)
    vals, labels = [], []
    for s in result.held_out:
        trial, stride = index[s]
        vals.append(trial.target(result.target)[stride.sample_rows])
        labels.append(trial.row_label[stride.sample_rows])
    return np.concatenate(vals), np.concatenate(labels)


# --------------------------------------------------------------- metrics


def compute_rmse(predicted, measured) -> float:
    p = np.asarray(predicted, dtype=np.float64).ravel()
    m = np.asarray(measured, dtype=np.float64).ravel()
    if p.size != m.size:
        raise LengthMismatch(f"{p.size} predictions vs {m.size} measurements")
    if p.size == 0:
        raise EmptyInput("RMSE of an empty sequence")
    return float(np.sqrt(np.mean((p - m) ** 2)))


@dataclass(frozen=True)
class RmseRow:
    subject_id: str
    task: Task
    paradigm: Paradigm
    feature_set: FeatureSet
    target: Target
    stride_label: str
    fold: int
    rmse: float | None
    status: str = "ok"  # ok | absent | failed

    def key(self) -> tuple:
        return (self.subject_id, self.task, self.paradigm, self.feature_set, self.target,
                self.stride_label)


STAIR_LABELS = (StrideLabel.WALK_TO_STAIR, StrideLabel.STEADY_STATE, StrideLabel.STAIR_TO_WALK)


def evaluate_transients(subject: SubjectData, results: Sequence[FoldResult]) -> list[RmseRow]:
    """Per-label RMSE rows of stair folds; labels absent from a fold are marked absent."""
    rows = []
    for r in results:
        if not r.task.is_stair:
            continue
        if r.failed:
            rows += [_row(r, lab.value, None, "failed") for lab in STAIR_LABELS]
            continue
        meas, labels = measured_for(subject, r)
        for lab in STAIR_LABELS:
            m = labels == lab.value
            if not m.any():
                rows.append(_row(r, lab.value, None, "absent"))
            else:
                rows.append(_row(r, lab.value, compute_rmse(r.predicted[m], meas[m])))
    return rows


def _row(r: FoldResult, label: str, rmse, status="ok") -> RmseRow:
    return RmseRow(r.subject_id, r.task, r.paradigm, r.feature_set, r.target, label, r.fold,
                   rmse, status)


def rmse_rows(subject: SubjectData, results: Sequence[FoldResult]) -> list[RmseRow]:
    """Pooled rows for every fold plus the stair label split."""
    rows = []
    for r in results:
        if r.failed:
            rows.append(_row(r, ALL_STRIDES, None, "failed"))
            continue
        meas, _ = measured_for(subject, r)
        rows.append(_row(r, ALL_STRIDES, compute_rmse(r.predicted, meas)))
    return rows + evaluate_transients(subject, results)


@dataclass(frozen=True)
class RmseReport:
    rows: tuple[RmseRow, ...]

    def sorted(self) -> "RmseReport":
        order = {t: i for i, t in enumerate(Task)}
        lab_order = {ALL_STRIDES: 0, **{lab.value: i + 1 for i, lab in enumerate(STAIR_LABELS)}}
        return RmseReport(tuple(sorted(self.rows, key=lambda r: (
            r.subject_id, order[r.task], r.paradigm.value, r.feature_set.value, r.target.value,
            lab_order.get(r.stride_label, 9), r.fold))))

    def subject_means(self) -> dict[tuple, tuple[float, float, int]]:
        """(subject, task, paradigm, feature_set, target, label) -> (mean, sd, folds)."""
        groups = defaultdict(list)
        for r in self.rows:
            if r.status == "ok":
                groups[r.key()].append(r.rmse)
        return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in groups.items()}

    def cohort_cells(self) -> dict[tuple, tuple[float, float, int]]:
        """(task, paradigm, feature_set, target, label) -> mean (SD) across subject means."""
        groups = defaultdict(list)
        for k, (m, _, _) in self.subject_means().items():
            groups[k[1:]].append(m)
        return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in groups.items()}

    @property
    def subjects(self) -> list[str]:
        return sorted({r.subject_id for r in self.rows})


REPORT_HEADER = ("subject", "task", "paradigm", "feature_set", "target", "stride_label", "fold",
                 "rmse")


def write_report_csv(path, report: RmseReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in report.sorted().rows:
            val = f"{r.rmse:.6f}" if r.status == "ok" else r.status.upper()
            w.writerow([r.subject_id, r.task.value, r.paradigm.value, r.feature_set.value,
                        r.target.value, r.stride_label, r.fold, val])


def read_report_csv(path) -> RmseReport:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != REPORT_HEADER:
            raise InputError(f"{path}: expected header {','.join(REPORT_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(REPORT_HEADER):
                raise InputError(f"{path}:{lineno}: expected {len(REPORT_HEADER)} fields")
            try:
                s, task, par, fs, tgt, lab, fold, val = rec
                status = {"ABSENT": "absent", "FAILED": "failed"}.get(val, "ok")
                rows.append(RmseRow(s, Task(task), Paradigm(par), FeatureSet(fs), Target(tgt),
                                    lab, int(fold), float(val) if status == "ok" else None, status))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return RmseReport(tuple(rows))


# ------------------------------------------------------------ cohort run


@dataclass(frozen=True)
class SubjectOutcome:
    subject: SubjectData
    results: tuple[FoldResult, ...]
    rows: tuple[RmseRow, ...]


def _run_one(args) -> SubjectOutcome:
    subject, config = args
    results = run_experiment(subject, config)
    return SubjectOutcome(subject, tuple(results), tuple(rmse_rows(subject, results)))


def run_cohort(subjects: Sequence[SubjectData], config: ExperimentConfig = ExperimentConfig(),
               workers: int = 1) -> list[SubjectOutcome]:
    """Subjects are independent; results come back in input order."""
    jobs = [(s, config) for s in subjects]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_one, jobs))


def cohort_report(outcomes: Iterable[SubjectOutcome]) -> RmseReport:
    return RmseReport(tuple(r for o in outcomes for r in o.rows)).sorted()


# ----------------------------------------------------------- trajectories


def normalized_predictions(outcome: SubjectOutcome, task: Task, paradigm: Paradigm,
                           feature_set: FeatureSet, target: Target
                           ) -> list[tuple[Stride, NormalizedStride, NormalizedStride]]:
    """(stride, predicted, measured) on the percent grid for every held-out stride."""
    index = _stride_index(outcome.subject)
    out = []
    for r in outcome.results:
        if (r.task, r.paradigm, r.feature_set, r.target) != (Task(task), paradigm, feature_set,
                                                             Target(target)) or r.failed:
            continue
        times = np.concatenate([index[s][0].timestamps_ms[index[s][1].sample_rows]
                                for s in r.held_out])
        meas, _ = measured_for(outcome.subject, r)
        for s in r.held_out:
            stride = index[s][1]
            out.append((stride, normalize_stride(stride, times, r.predicted),
                        normalize_stride(stride, times, meas)))
    return out


def trajectory_bands(outcomes: Sequence[SubjectOutcome], feature_set: FeatureSet,
                     target: Target) -> dict[str, TrajectoryBand]:
    """Mean/SD bands per task and paradigm; stair triplets on [-100, 200]."""
    bands = {}
    for paradigm in Paradigm:
        for task in Task:
            pred, meas, triplets = [], [], []
            for o in outcomes:
                norm = normalized_predictions(o, task, paradigm, feature_set, target)
                if not norm:
                    continue
                by_id = {st.stride_id: (p, m) for st, p, m in norm}
                for st, p, m in norm:
                    if st.label is StrideLabel.STEADY_STATE:
                        pred.append(p)
                        meas.append(m)
                if task.is_stair:
                    for trip in transition_triplets([st for st, _, _ in norm]):
                        triplets.append([by_id[s.stride_id] if s is not None else None
                                         for s in trip])
            if not pred:
                continue
            stem = f"{task.value}/{paradigm.value}/{FeatureSet(feature_set).value}/{Target(target).value}"
            bands[f"{stem}/predicted"] = trajectory_band(pred)
            bands[f"{stem}/measured"] = trajectory_band(meas)
            if triplets:
                bands[f"{stem}/transition_predicted"] = triplet_band(
                    [[m[0] if m else None for m in t] for t in triplets])
                bands[f"{stem}/transition_measured"] = triplet_band(
                    [[m[1] if m else None for m in t] for t in triplets])
    return bands


# --------------------------------------------------------- swing flexion


@dataclass(frozen=True)
class SwingFlexionEntry:
    task: Task
    mean_peak_deg: float
    threshold_deg: float
    strides: int

    @property
    def passed(self) -> bool:
        return self.mean_peak_deg >= self.threshold_deg


@dataclass(frozen=True)
class SwingFlexionReport:
    entries: tuple[SwingFlexionEntry, ...]

    def __getitem__(self, task) -> SwingFlexionEntry:
        for e in self.entries:
            if e.task is Task(task):
                return e
        raise KeyError(task)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)


def swing_flexion_check(predicted: dict) -> SwingFlexionReport:
    """Mean over strides of the peak predicted angle on the 50-100 % grid."""
    if not predicted:
        raise EmptyInput("no stair predictions")
    swing = PERCENT_GRID >= 50.0
    entries = []
    for task, strides in predicted.items():
        task = Task(task)
        if task not in SWING_FLEXION_THRESHOLDS:
            raise InputError(f"no swing-flexion threshold for {task.value}")
        strides = list(strides)
        if not strides:
            raise EmptyInput(f"no {task.value} strides")
        peaks = [float(np.max(np.asarray(s.values)[swing])) for s in strides]
        entries.append(SwingFlexionEntry(task, float(np.mean(peaks)),
                                         SWING_FLEXION_THRESHOLDS[task], len(peaks)))
    return SwingFlexionReport(tuple(entries))


def cohort_swing_flexion(outcomes: Sequence[SubjectOutcome],
                         paradigm: Paradigm = Paradigm.TASK_SPECIFIC,
                         feature_set: FeatureSet = FeatureSet.INTENSITY_PLUS_TEMPORAL
                         ) -> SwingFlexionReport:
    """Swing-flexion check over held-out steady-state stair strides of all subjects."""
    predicted = {}
    for task in STAIR_TASKS:
        strides = []
        for o in outcomes:
            for st, p, _ in normalized_predictions(o, task, paradigm, feature_set,
                                                   Target.KNEE_ANGLE):
                if st.label is StrideLabel.STEADY_STATE:
                    strides.append(p)
        predicted[task] = strides
    return swing_flexion_check(predicted)


# ---------------------------------------------------------------- tables


@dataclass(frozen=True)
class CellMarkers:
    paradigm_tier: dict  # feature_set -> "", "a" or "b" (on the task-invariant cell)
    feature_tier: str  # "", "c" or "d" (on the temporal column)


def significance_markers(report: RmseReport, task: Task, target: Target,
                         label: str = ALL_STRIDES, alpha: float = 0.05,
                         strict: float = 0.01) -> CellMarkers | None:
    """Paradigm posthoc (a/b) and feature-set main effect (c/d) markers.

    ``None`` when fewer than two subjects have every condition.
    """
    means = report.subject_means()
    records = []
    for s in report.subjects:
        vals = [((p.value, f.value), means.get((s, Task(task), p, f, Target(target), label)))
                for p in Paradigm for f in FeatureSet]
        if all(v is not None for _, v in vals):
            records += [(s, p, f, v[0]) for (p, f), v in vals]
    try:
        design = RmDesign.from_records(records)
    except IncompleteDesign:
        return None
    anova = rm_two_way_anova(design)
    p_feat = anova["feature_set"].p
    feature_tier = "d" if p_feat < strict else "c" if p_feat < alpha else ""
    pairs = [((Paradigm.TASK_SPECIFIC.value, f.value), (Paradigm.TASK_INVARIANT.value, f.value))
             for f in FeatureSet]
    n_cond = len(design.conditions)
    post = bonferroni_posthoc(design, pairs, family_size=n_cond * (n_cond - 1) // 2,
                              alpha=alpha, strict=strict)
    tiers = {}
    for f, res in zip(FeatureSet, post):
        tiers[f] = res.tier
    return CellMarkers(tiers, feature_tier)


_TASK_TITLES = {
    Task.LEVEL: "Level", Task.INCLINE: "Incline", Task.DECLINE: "Decline",
    Task.STAIR_ASCENT: "Stair Ascent", Task.STAIR_DESCENT: "Stair Descent",
}
_LABEL_TITLES = {
    StrideLabel.WALK_TO_STAIR.value: "Walk-to-Stair",
    StrideLabel.STEADY_STATE.value: "Steady-State",
    StrideLabel.STAIR_TO_WALK.value: "Stair-to-Walk",
}
_FS_TITLES = {FeatureSet.INTENSITY: "Intensity", FeatureSet.INTENSITY_PLUS_TEMPORAL: "Temporal"}
_PARADIGM_TITLES = {Paradigm.TASK_SPECIFIC: "Task-Specific",
                    Paradigm.TASK_INVARIANT: "Task-Invariant"}


def _fmt_cell(cell, mark="") -> str:
    if cell is None:
        return "-"
    txt = f"{cell[0]:.1f} ({cell[1]:.1f})"
    return f"{txt} ^{mark}" if mark else txt


def _table(report: RmseReport, title: str, target: Target, columns: list[tuple[Task, str]],
           alpha: float, strict: float) -> str:
    cells = report.cohort_cells()
    groups = [(t, lab) for t, lab in columns]
    markers = {g: significance_markers(report, g[0], target, g[1], alpha, strict)
               for g in groups}
    head1 = ["Task:"]
    head2 = ["Feature Set:"]
    for t, lab in groups:
        name = _TASK_TITLES[t] if lab == ALL_STRIDES else f"{_TASK_TITLES[t]} {_LABEL_TITLES[lab]}"
        head1 += [name, ""]
        m = markers[(t, lab)]
        temporal = "Temporal" + (f" ^{m.feature_tier}" if m and m.feature_tier else "")
        head2 += ["Intensity", temporal]
    lines = [title, "\t".join(head1), "\t".join(head2)]
    for p in Paradigm:
        row = [_PARADIGM_TITLES[p]]
        for t, lab in groups:
            m = markers[(t, lab)]
            for f in FeatureSet:
                cell = cells.get((t, p, f, Target(target), lab))
                mark = m.paradigm_tier.get(f, "") if (m and p is Paradigm.TASK_INVARIANT) else ""
                row.append(_fmt_cell(cell, mark))
        lines.append("\t".join(row))
    return "\n".join(lines)


def overall_means(report: RmseReport, target: Target) -> dict[Paradigm, tuple[float, float]]:
    """Mean (SD across subjects) of each subject's average over tasks and feature sets."""
    means = report.subject_means()
    out = {}
    for p in Paradigm:
        per_subject = []
        for s in report.subjects:
            vals = [v[0] for k, v in means.items()
                    if k[0] == s and k[2] is p and k[4] is Target(target) and k[5] == ALL_STRIDES]
            if vals:
                per_subject.append(np.mean(vals))
        if per_subject:
            out[p] = (float(np.mean(per_subject)), float(np.std(per_subject)))
    return out


def render_report(report: RmseReport, swing: SwingFlexionReport | None = None,
                  alpha: float = 0.05, strict: float = 0.01) -> str:
    """Tables I-IV shaped text plus overall averages next to the published ones."""
    tasks_all = [(t, ALL_STRIDES) for t in Task]
    stair_split = [(t, lab.value) for t in STAIR_TASKS for lab in STAIR_LABELS]
    parts = [
        _table(report, "TABLE I. MEAN (SD) RMSE (DEG) OF KNEE ANGLE ESTIMATION", Target.KNEE_ANGLE,
               tasks_all, alpha, strict),
        _table(report, "TABLE II. MEAN (SD) RMSE (DEG/S) OF KNEE ANGULAR VELOCITY ESTIMATION",
               Target.KNEE_VELOCITY, tasks_all, alpha, strict),
        _table(report, "TABLE III. MEAN (SD) RMSE (DEG) OF KNEE ANGLE ESTIMATION, "
               "STEADY-STATE AND TRANSIENT STAIR STRIDES", Target.KNEE_ANGLE, stair_split, alpha, strict),
        _table(report, "TABLE IV. MEAN (SD) RMSE (DEG/S) OF KNEE ANGULAR VELOCITY ESTIMATION, "
               "STEADY-STATE AND TRANSIENT STAIR STRIDES", Target.KNEE_VELOCITY, stair_split, alpha,
               strict),
        f"^a/^b: paradigm posthoc p < {alpha:g} / p < {strict:g} (Bonferroni). "
        f"^c/^d: feature-set main effect p < {alpha:g} / p < {strict:g}.",
    ]
    lines = ["OVERALL MEAN (SD) RMSE ACROSS TASKS AND SUBJECTS (reference values in brackets)"]
    for target, unit in ((Target.KNEE_ANGLE, "deg"), (Target.KNEE_VELOCITY, "deg/s")):
        ov = overall_means(report, target)
        for p in Paradigm:
            if p in ov:
                ref = REFERENCE_OVERALL[target][p.value]
                lines.append(f"{target.value}\t{_PARADIGM_TITLES[p]}\t{ov[p][0]:.2f} ({ov[p][1]:.2f}) "
                             f"{unit}\t[{ref}]")
    parts.append("\n".join(lines))
    if swing is not None:
        sw = ["SWING FLEXION (mean predicted peak vs threshold)"]
        for e in swing.entries:
            sw.append(f"{_TASK_TITLES[e.task]}\t{e.mean_peak_deg:.1f}\t>= {e.threshold_deg}\t"
                      f"{'pass' if e.passed else 'fail'}\t({e.strides} strides)")
        parts.append("\n".join(sw))
    return "\n\n".join(parts) + "\n"


__all__ = [
    "CvFold",
    "ExperimentConfig",
    "FeatureSet",
    "FoldResult",
    "HyperMode",
    "Paradigm",
    "RmseReport",
    "RmseRow",
    "SubjectData",
    "SwingFlexionReport",
    "TREADMILL_TASKS",
    "compute_rmse",
    "decimate_groups",
    "evaluate_transients",
    "make_stair_folds",
    "make_treadmill_folds",
    "prepare_subject",
    "render_report",
    "run_cohort",
    "run_experiment",
    "swing_flexion_check",
    "training_plan",
]
