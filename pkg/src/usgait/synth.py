"""Synthetic cohorts with known ground truth.

Knee-angle templates are 4-harmonic Fourier series fitted to hand-placed
keypoints of each task's gait cycle, then stretched so the swing peak hits a
target value.  A trial is a sequence of strides; each stride blends a "from"
template into a "to" template with a smoothstep (identical templates for
steady strides), and per-stride period and amplitude vary smoothly, so the
angle is C1 in time and its analytic derivative is the reference velocity.

Frames follow a depth-structured echo model::

    I(z, x, t) = clip8(b(z, x) + w1(z, x) g1(angle) + w2(z, x) g2(velocity) + noise)

with ``g1 = tanh((angle - 40) / 40)`` and ``g2 = tanh(velocity / 400)``.  The
response maps ``w1``/``w2`` differ across depth, so kernel means separate
distinct (angle, velocity) states.  The velocity response is weaker than the
angle response and is scaled to a fixed RMS, so every subject gets the same
single-frame velocity signal.  This is a generator of well-posed regression problems, not
an ultrasound simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InputError
from .features import KernelGrid, kernel_means
from .frames import (
    Annotation,
    EventKind,
    FrameSequence,
    GaitEvent,
    Kinematics,
    ManifestEntry,
    STAIR_TASKS,
    TREADMILL_TASKS,
    Task,
    TrialRecord,
    write_manifest,
    write_trial,
)

N_HARMONICS = 4
ANGLE_CENTER_DEG = 40.0
ANGLE_SCALE_DEG = 40.0
VELOCITY_SCALE_DEG_S = 400.0

# (percent of cycle, knee flexion deg) shape keypoints; peaks are rescaled
_KEYPOINTS = {
    Task.LEVEL: [(0, 5), (15, 18), (40, 5), (60, 35), (73, 60), (90, 20)],
    Task.INCLINE: [(0, 15), (15, 22), (40, 10), (60, 40), (75, 65), (90, 28)],
    Task.DECLINE: [(0, 5), (15, 25), (40, 15), (60, 40), (74, 62), (90, 22)],
    Task.STAIR_ASCENT: [(0, 60), (25, 35), (50, 12), (62, 40), (75, 90), (90, 75)],
    Task.STAIR_DESCENT: [(0, 10), (20, 15), (45, 40), (60, 70), (72, 85), (88, 40)],
}
_PEAKS = {
    Task.LEVEL: 60.0,
    Task.INCLINE: 65.0,
    Task.DECLINE: 62.0,
    Task.STAIR_ASCENT: 88.0,
    Task.STAIR_DESCENT: 84.0,
}
# treadmill periods follow the reported speeds (slower incline/decline walking)
_PERIODS_S = {
    Task.LEVEL: 1.30,
    Task.INCLINE: 1.45,
    Task.DECLINE: 1.50,
    Task.STAIR_ASCENT: 1.60,
    Task.STAIR_DESCENT: 1.45,
}
_TOE_OFF_FRACTION = {
    Task.LEVEL: 0.62,
    Task.INCLINE: 0.62,
    Task.DECLINE: 0.62,
    Task.STAIR_ASCENT: 0.64,
    Task.STAIR_DESCENT: 0.62,
}


@dataclass(frozen=True)
class TaskTemplate:
    task: Task
    stride_period_s: float
    coefficients: np.ndarray  # [c0, a1, b1, ..., a4, b4]
    toe_off_fraction: float

    @classmethod
    def from_keypoints(cls, task: Task, keypoints, peak_deg: float, period_s: float,
                       toe_off_fraction: float = 0.62) -> "TaskTemplate":
        pts = sorted(keypoints)
        p = np.array([q for q, _ in pts] + [100.0]) / 100.0
        a = np.array([v for _, v in pts] + [pts[0][1]], dtype=np.float64)
        grid = np.linspace(0.0, 1.0, 2000, endpoint=False)
        target = np.interp(grid, p, a)
        basis = _basis(grid)
        coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
        dense = basis @ coef
        lo, hi = dense.min(), dense.max()
        # stretch about the minimum so the swing peak equals peak_deg
        gain = (peak_deg - lo) / (hi - lo)
        coef = coef * gain
        coef[0] += lo * (1.0 - gain)
        return cls(task, period_s, coef, toe_off_fraction)

    def angle(self, p) -> np.ndarray:
        return _basis(np.asarray(p, dtype=np.float64)) @ self.coefficients

    def dangle_dp(self, p) -> np.ndarray:
        return _dbasis(np.asarray(p, dtype=np.float64)) @ self.coefficients

    def peak_swing_flexion_deg(self) -> float:
        grid = np.linspace(0.5, 1.0, 5001)
        return float(self.angle(grid).max())


def _basis(p):
    p = np.atleast_1d(p)
    cols = [np.ones_like(p)]
    for k in range(1, N_HARMONICS + 1):
        w = 2.0 * np.pi * k * p
        cols += [np.cos(w), np.sin(w)]
    return np.stack(cols, axis=-1)


def _dbasis(p):
    p = np.atleast_1d(p)
    cols = [np.zeros_like(p)]
    for k in range(1, N_HARMONICS + 1):
        w = 2.0 * np.pi * k
        cols += [-w * np.sin(w * p), w * np.cos(w * p)]
    return np.stack(cols, axis=-1)


def default_templates() -> dict[Task, TaskTemplate]:
    return {
        t: TaskTemplate.from_keypoints(t, _KEYPOINTS[t], _PEAKS[t], _PERIODS_S[t],
                                       _TOE_OFF_FRACTION[t])
        for t in Task
    }


@dataclass(frozen=True)
class SynthConfig:
    subjects: int = 7
    strides_per_task: dict = field(default_factory=lambda: {
        Task.LEVEL: 41, Task.INCLINE: 38, Task.DECLINE: 42,
    })
    stair_trials: int = 5
    #: steady-state stair strides per subject, spread over the stair trials
    stair_steady_strides: dict = field(default_factory=lambda: {
        Task.STAIR_ASCENT: 13, Task.STAIR_DESCENT: 15,
    })
    frame_rate_hz: float = 20.0
    kinematics_rate_hz: float = 100.0
    frame_time_jitter_ms: int = 1
    width_px: int = 32
    height_px: int = 48
    pixel_spacing_mm: float = 0.5
    noise_sd_intensity: float = 2.0
    kinematics_noise_sd_deg: float = 1.0
    #: velocity label noise per degree of angle noise (deg/s per deg)
    velocity_noise_per_deg: float = 10.0
    angle_response: tuple[float, float] = (20.0, 45.0)
    velocity_response: tuple[float, float] = (4.0, 10.0)
    #: RMS of the velocity weight map after scaling; ``None`` keeps the raw bumps
    velocity_response_rms: float | None = 3.5
    stride_period_jitter: float = 0.03
    amplitude_jitter: float = 0.03
    subject_speed_sd: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.subjects < 1 or self.stair_trials < 1:
            raise InputError("subjects and stair_trials must be positive")
        if any(int(v) < 1 for v in self.strides_per_task.values()):
            raise InputError("stride counts must be positive")
        if any(int(v) < 0 for v in self.stair_steady_strides.values()):
            raise InputError("steady stair stride counts must be >= 0")
        for name in ("noise_sd_intensity", "kinematics_noise_sd_deg", "velocity_noise_per_deg",
                     "stride_period_jitter", "amplitude_jitter", "subject_speed_sd"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if self.velocity_response_rms is not None and self.velocity_response_rms <= 0:
            raise InputError("velocity_response_rms must be positive")
        if self.frame_rate_hz <= 0 or self.kinematics_rate_hz <= 0:
            raise InputError("sampling rates must be positive")
        object.__setattr__(self, "strides_per_task",
                           {Task(k): int(v) for k, v in self.strides_per_task.items()})
        object.__setattr__(self, "stair_steady_strides",
                           {Task(k): int(v) for k, v in self.stair_steady_strides.items()})

    def noiseless(self) -> "SynthConfig":
        return replace(self, noise_sd_intensity=0.0, kinematics_noise_sd_deg=0.0)


@dataclass(frozen=True)
class EchoModel:
    """Per-subject image response maps, each ``(height, width)``."""

    baseline: np.ndarray
    angle_weight: np.ndarray
    velocity_weight: np.ndarray

    def render(self, angle_deg, velocity_deg_s) -> np.ndarray:
        """Noise-free float images for a batch of states -> ``(T, H, W)``."""
        g1, g2 = state_code(angle_deg, velocity_deg_s)
        return (self.baseline[None]
                + self.angle_weight[None] * g1[:, None, None]
                + self.velocity_weight[None] * g2[:, None, None])


def state_code(angle_deg, velocity_deg_s) -> tuple[np.ndarray, np.ndarray]:
    """Smooth invertible map of (angle, velocity) into [-1, 1]^2."""
    a = np.atleast_1d(np.asarray(angle_deg, dtype=np.float64))
    v = np.atleast_1d(np.asarray(velocity_deg_s, dtype=np.float64))
    return np.tanh((a - ANGLE_CENTER_DEG) / ANGLE_SCALE_DEG), np.tanh(v / VELOCITY_SCALE_DEG_S)


def _bumps(rng, depth, count, amp_range, width_range, signed=True):
    out = np.zeros_like(depth)
    for _ in range(count):
        c = rng.uniform(0.05, 0.95)
        w = rng.uniform(*width_range)
        amp = rng.uniform(*amp_range)
        if signed and rng.random() < 0.5:
            amp = -amp
        out += amp * np.exp(-0.5 * ((depth - c) / w) ** 2)
    return out


def make_echo_model(config: SynthConfig, rng: np.random.Generator) -> EchoModel:
    h, w = config.height_px, config.width_px
    depth = (np.arange(h) + 0.5) / h
    lateral = (np.arange(w) + 0.5) / w
    # fascia, aponeurosis and bone appear as bright bands over a muscle floor
    base = 55.0 + np.zeros(h)
    for centre, amp, width in ((0.12, 60.0, 0.03), (0.5, 85.0, 0.025), (0.92, 110.0, 0.04)):
        c = centre + rng.normal(0, 0.02)
        base += amp * rng.uniform(0.8, 1.1) * np.exp(-0.5 * ((depth - c) / width) ** 2)
    texture = rng.normal(0.0, 6.0, size=(h, w))
    baseline = np.clip(base[:, None] + texture, 10.0, 190.0)

    tilt = 1.0 + 0.25 * np.cos(2 * np.pi * lateral[None, :] + rng.uniform(0, 2 * np.pi, size=(h, 1)))
    w1 = _bumps(rng, depth, 3, config.angle_response, (0.06, 0.18))
    w2 = _bumps(rng, depth, 3, config.velocity_response, (0.05, 0.15))[:, None] * tilt[::-1]
    if config.velocity_response_rms is not None:
        # bump overlap makes the raw velocity signal vary several-fold between subjects
        w2 *= config.velocity_response_rms / np.sqrt(np.mean(w2 ** 2))
    return EchoModel(baseline, w1[:, None] * tilt, w2)


@dataclass(frozen=True)
class StridePlan:
    source: Task
    target: Task
    period_s: float
    amplitude: float
    annotation: Annotation = Annotation.NONE


@dataclass(frozen=True)
class GroundTruth:
    """Noise-free kinematics at the kinematics sample times and at frames."""

    timestamps_ms: np.ndarray
    angle_deg: np.ndarray
    velocity_deg_s: np.ndarray
    frame_angle_deg: np.ndarray
    frame_velocity_deg_s: np.ndarray


class _Trajectory:
    """Angle as a C1 function of time for a sequence of strides.

    Phase ``phi`` counts strides; ``t(phi)`` is a monotone PCHIP through the
    cumulative stride boundaries, so stride ``k`` spans ``[t(k), t(k+1)]``.
    """

    def __init__(self, plans: list[StridePlan], templates: dict[Task, TaskTemplate], t0_s: float):
        self.plans = plans
        self.templates = templates
        k = len(plans)
        knots = np.arange(k + 1, dtype=np.float64)
        times = t0_s + np.concatenate([[0.0], np.cumsum([p.period_s for p in plans])])
        self.time_of = PchipInterpolator(knots, times)
        self.dtime = self.time_of.derivative()
        amps = np.array([p.amplitude for p in plans])
        if k >= 2:
            self._amp = PchipInterpolator(knots[:-1] + 0.5, amps)
            self._damp = self._amp.derivative()
        else:
            self._amp = None
        self._k = k
        grid = np.linspace(0.0, k, 400 * k + 1)
        self._phi_grid = grid
        self._t_grid = self.time_of(grid)

    def amplitude(self, phi):
        if self._amp is None:
            return np.full_like(phi, self.plans[0].amplitude), np.zeros_like(phi)
        c = np.clip(phi, 0.5, self._k - 0.5)
        inside = (phi > 0.5) & (phi < self._k - 0.5)
        return self._amp(c), np.where(inside, self._damp(c), 0.0)

    def phase(self, t_s):
        t_s = np.asarray(t_s, dtype=np.float64)
        phi = np.interp(t_s, self._t_grid, self._phi_grid)
        for _ in range(3):  # Newton polish of the tabulated inverse
            phi = np.clip(phi - (self.time_of(phi) - t_s) / self.dtime(phi), 0.0, self._k)
        return phi

    def state(self, t_s):
        phi = self.phase(t_s)
        idx = np.minimum(np.floor(phi).astype(int), self._k - 1)
        u = phi - idx
        base = np.empty_like(phi)
        dbase = np.empty_like(phi)
        for k in np.unique(idx):
            m = idx == k
            plan = self.plans[k]
            uk = u[m]
            f_src = self.templates[plan.source]
            f_tgt = self.templates[plan.target]
            if plan.source is plan.target:
                base[m] = f_tgt.angle(uk)
                dbase[m] = f_tgt.dangle_dp(uk)
            else:
                s = uk * uk * (3.0 - 2.0 * uk)
                ds = 6.0 * uk * (1.0 - uk)
                a_src, a_tgt = f_src.angle(uk), f_tgt.angle(uk)
                base[m] = (1.0 - s) * a_src + s * a_tgt
                dbase[m] = (ds * (a_tgt - a_src) + (1.0 - s) * f_src.dangle_dp(uk)
                            + s * f_tgt.dangle_dp(uk))
        amp, damp = self.amplitude(phi)
        angle = amp * base
        dangle_dphi = damp * base + amp * dbase
        return angle, dangle_dphi / self.dtime(phi)

    def time_ms(self, phi) -> int:
        return int(round(float(self.time_of(phi)) * 1000.0))


def _stride_plans(task: Task, n_strides: int, period_s: float, config: SynthConfig,
                  rng: np.random.Generator, transition: bool) -> list[StridePlan]:
    """Plans including one padding stride at each end (outside heel-strikes)."""
    def draw(source, target, base_period, annotation=Annotation.NONE):
        per = base_period * (1.0 + config.stride_period_jitter * rng.standard_normal())
        amp = 1.0 + config.amplitude_jitter * rng.standard_normal()
        return StridePlan(source, target, max(per, 0.3 * base_period), amp, annotation)

    level_period = _PERIODS_S[Task.LEVEL] * period_s / _PERIODS_S[task]
    if not transition:
        return [draw(task, task, period_s) for _ in range(n_strides + 2)]
    plans = [draw(Task.LEVEL, Task.LEVEL, level_period),
             draw(Task.LEVEL, task, 0.5 * (level_period + period_s), Annotation.WALK_TO_STAIR)]
    plans += [draw(task, task, period_s) for _ in range(n_strides)]
    plans += [draw(task, Task.LEVEL, 0.5 * (level_period + period_s), Annotation.STAIR_TO_WALK),
              draw(Task.LEVEL, Task.LEVEL, level_period)]
    return plans


def _trial_rng(config: SynthConfig, subject: int, task: Task, trial: int) -> np.random.Generator:
    ss = np.random.SeedSequence([config.seed, subject, list(Task).index(task), trial])
    return np.random.default_rng(ss)


def subject_id(subject: int) -> str:
    return f"S{subject + 1:02d}"


def subject_echo(config: SynthConfig, subject: int) -> EchoModel:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, subject, 1_000_003]))
    return make_echo_model(config, rng)


def subject_speed_factor(config: SynthConfig, subject: int) -> float:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, subject, 2_000_003]))
    return float(np.clip(1.0 + config.subject_speed_sd * rng.standard_normal(), 0.7, 1.3))


def generate_trial(template: TaskTemplate, config: SynthConfig, rng: np.random.Generator,
                   *, subject: int = 0, trial_index: int = 0, n_strides: int | None = None,
                   echo: EchoModel | None = None, templates: dict[Task, TaskTemplate] | None = None,
                   speed_factor: float = 1.0) -> tuple[TrialRecord, GroundTruth]:
    """One trial of ``template.task`` plus its noise-free ground truth.

    Stair tasks get a walk-to-stair stride before and a stair-to-walk stride
    after ``n_strides`` steady stair strides; treadmill tasks get
    ``n_strides`` steady strides.  Heel-strikes bound the non-padding strides.
    """
    task = template.task
    templates = dict(templates or default_templates())
    templates[task] = template
    echo = echo if echo is not None else subject_echo(config, subject)
    if n_strides is None:
        n_strides = (config.strides_per_task.get(task) if not task.is_stair
                     else _stair_split(config.stair_steady_strides[task], config.stair_trials)[trial_index % config.stair_trials])
    period = template.stride_period_s * speed_factor
    plans = _stride_plans(task, n_strides, period, config, rng, task.is_stair)
    t0 = 1.0 + rng.uniform(0.0, 0.5)
    traj = _Trajectory(plans, templates, t0)
    n_plan = len(plans)

    # heel-strikes at every inner boundary, annotation on the stride's opening one
    events = []
    for k in range(1, n_plan):
        ann = plans[k].annotation if k < n_plan - 1 else Annotation.NONE
        events.append(GaitEvent(traj.time_ms(k), EventKind.HEEL_STRIKE, ann))
        if k < n_plan - 1:
            frac = templates[plans[k].target].toe_off_fraction
            events.append(GaitEvent(traj.time_ms(k + frac), EventKind.TOE_OFF))

    start_ms = traj.time_ms(0.5)
    end_ms = traj.time_ms(n_plan - 0.5)
    kin_step = int(round(1000.0 / config.kinematics_rate_hz))
    kin_t = np.arange(start_ms, end_ms + 1, kin_step, dtype=np.int64)
    true_a, true_v = traj.state(kin_t / 1000.0)
    noise_a = config.kinematics_noise_sd_deg
    noise_v = config.kinematics_noise_sd_deg * config.velocity_noise_per_deg
    kin = Kinematics(
        kin_t,
        true_a + (noise_a * rng.standard_normal(kin_t.size) if noise_a > 0 else 0.0),
        true_v + (noise_v * rng.standard_normal(kin_t.size) if noise_v > 0 else 0.0),
    )

    frame_step = 1000.0 / config.frame_rate_hz
    n_frames = int(np.floor((kin_t[-1] - kin_t[0] - 2 * config.frame_time_jitter_ms) / frame_step))
    base = kin_t[0] + config.frame_time_jitter_ms + np.round(np.arange(n_frames) * frame_step)
    jitter = (rng.integers(-config.frame_time_jitter_ms, config.frame_time_jitter_ms + 1, n_frames)
              if config.frame_time_jitter_ms > 0 else 0)
    frame_t = (base + jitter).astype(np.int64)
    fa, fv = traj.state(frame_t / 1000.0)
    images = echo.render(fa, fv)
    if config.noise_sd_intensity > 0:
        images = images + config.noise_sd_intensity * rng.standard_normal(images.shape)
    images = np.clip(np.rint(images), 0, 255).astype(np.uint8)
    frames = FrameSequence(frame_t, images, config.pixel_spacing_mm)

    trial = TrialRecord(subject_id(subject), task, trial_index, frames, tuple(events), kin)
    return trial, GroundTruth(kin_t, true_a, true_v, fa, fv)


def _stair_split(total: int, trials: int) -> list[int]:
    base, extra = divmod(total, trials)
    return [base + (1 if i < extra else 0) for i in range(trials)]


def generate_subject(config: SynthConfig, subject: int,
                     tasks=None) -> list[tuple[TrialRecord, GroundTruth]]:
    """All trials of one subject: one per treadmill task, ``stair_trials`` per stair task."""
    templates = default_templates()
    echo = subject_echo(config, subject)
    speed = subject_speed_factor(config, subject)
    tasks = list(tasks) if tasks is not None else list(Task)
    out = []
    for task in tasks:
        task = Task(task)
        n_trials = config.stair_trials if task.is_stair else 1
        for trial in range(n_trials):
            rng = _trial_rng(config, subject, task, trial)
            out.append(generate_trial(templates[task], config, rng, subject=subject,
                                      trial_index=trial, echo=echo, templates=templates,
                                      speed_factor=speed))
    return out


def write_ground_truth(path, truth: GroundTruth) -> None:
    with open(path, "w") as fh:
        fh.write("timestamp_ms,true_angle,true_velocity\n")
        for t, a, v in zip(truth.timestamps_ms, truth.angle_deg, truth.velocity_deg_s):
            fh.write(f"{int(t)},{float(a)!r},{float(v)!r}\n")


def generate_cohort(config: SynthConfig, out_dir, tasks=None) -> list[ManifestEntry]:
    """Write every subject's trials plus ``manifest.csv`` under ``out_dir``.

    Ground truth goes to ``truth/`` next to the subject folders and is not
    referenced by the manifest.
    """
    out_dir = Path(out_dir)
    entries = []
    try:
        for s in range(config.subjects):
            sid = subject_id(s)
            for trial, truth in generate_subject(config, s, tasks):
                stem = f"{sid}_{trial.task.value}_{trial.trial_index}"
                paths = write_trial(trial, out_dir / sid, stem)
                (out_dir / "truth").mkdir(parents=True, exist_ok=True)
                write_ground_truth(out_dir / "truth" / f"{stem}_truth.csv", truth)
                entries.append(ManifestEntry(sid, trial.task, trial.trial_index, **paths))
        write_manifest(out_dir / "manifest.csv", entries)
    except OSError as exc:
        raise IOError(f"could not write cohort under {out_dir}: {exc}") from exc
    return entries


def noise_free_features(echo: EchoModel, config: SynthConfig, angle_deg, velocity_deg_s,
                        kernel_size_mm: float = 3.0) -> np.ndarray:
    """Kernel-mean features of noise-free, unquantized images of given states."""
    grid = KernelGrid.for_frames(config.height_px, config.width_px, config.pixel_spacing_mm,
                                 kernel_size_mm)
    k = grid.kernel_px
    img = echo.render(angle_deg, velocity_deg_s)[:, : grid.rows * k, : grid.cols * k]
    t = img.shape[0]
    return img.reshape(t, grid.rows, k, grid.cols, k).mean(axis=(2, 4)).reshape(t, grid.n)


__all__ = [
    "EchoModel",
    "GroundTruth",
    "STAIR_TASKS",
    "SynthConfig",
    "TREADMILL_TASKS",
    "TaskTemplate",
    "default_templates",
    "generate_cohort",
    "generate_subject",
    "generate_trial",
    "kernel_means",
    "noise_free_features",
    "state_code",
    "subject_echo",
]
