"""Write a hand-built trial to disk, read it back and synchronize kinematics."""

import tempfile
from pathlib import Path

import numpy as np

from usgait.frames import (
    EventKind, FrameSequence, GaitEvent, Kinematics, Task, TrialRecord,
    load_trial, synchronize_kinematics, validate_trial, write_trial,
)

rng = np.random.default_rng(0)
frame_t = np.arange(0, 2001, 50)
kin_t = np.arange(0, 2001, 10)
frames = FrameSequence(frame_t, rng.integers(0, 256, (frame_t.size, 12, 9), dtype=np.uint8), 0.5)
kin = Kinematics(kin_t, 30 + 25 * np.sin(2 * np.pi * kin_t / 1000), np.zeros(kin_t.size))
events = tuple(GaitEvent(t, EventKind.HEEL_STRIKE) for t in (0, 1000, 2000))
trial = TrialRecord("S01", Task.LEVEL, 0, frames, events, kin)

with tempfile.TemporaryDirectory() as tmp:
    paths = write_trial(trial, Path(tmp), "demo")
    for name, p in paths.items():
        print(f"{name:16s} {Path(p).stat().st_size:7d} bytes")
    back = load_trial(paths["frames_path"], paths["events_path"], paths["kinematics_path"],
                      "S01", "level", 0)

print("validation:", validate_trial(back))
sync = synchronize_kinematics(back)
print(f"{sync.frame_indices.size} of {len(back.frames)} frames synchronized")
print("first angles:", np.round(sync.angle_deg[:5], 3))
