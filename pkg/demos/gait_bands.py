"""Segment a synthetic level trial into strides and build a mean/SD band."""

import numpy as np

from usgait.frames import Task, synchronize_kinematics
from usgait.gait import normalize_stride, segment_strides, trajectory_band
from usgait.synth import SynthConfig, default_templates, generate_trial

trial, _ = generate_trial(default_templates()[Task.LEVEL], SynthConfig(),
                          np.random.default_rng(1), n_strides=10)
sync = synchronize_kinematics(trial)
strides = segment_strides(trial, sync.timestamps_ms)
print(f"{len(strides)} strides, rows per stride: {[len(s) for s in strides]}")

kin = trial.kinematics
norm = [normalize_stride(s, kin.timestamps_ms, kin.angle_deg) for s in strides]
band = trajectory_band(norm)
for p in (0, 25, 50, 75, 100):
    i = int(p)
    print(f"{p:3d}%  {band.mean[i]:6.1f} +/- {band.sd[i]:4.1f} deg")
