import numpy as np
import pytest

from usgait.frames import (
    Annotation,
    EventKind,
    FrameSequence,
    GaitEvent,
    Kinematics,
    Task,
    TrialRecord,
)


def make_trial(frame_ts=None, kin_ts=None, heel_strikes=(0, 1000, 2000), annotations=None,
               shape=(6, 6), spacing=1.0, task=Task.LEVEL, seed=0, angle=None):
    """Small hand-built trial; kinematics default to an affine angle ramp."""
    rng = np.random.default_rng(seed)
    frame_ts = np.arange(0, 2001, 50) if frame_ts is None else np.asarray(frame_ts)
    kin_ts = np.arange(0, 2001, 10) if kin_ts is None else np.asarray(kin_ts)
    images = rng.integers(0, 256, size=(len(frame_ts),) + tuple(shape), dtype=np.uint8)
    ang = 0.01 * kin_ts + 5.0 if angle is None else angle(kin_ts)
    kin = Kinematics(kin_ts, ang, np.full(kin_ts.size, 10.0))
    annotations = annotations or {}
    events = [GaitEvent(int(t), EventKind.HEEL_STRIKE, annotations.get(int(t), Annotation.NONE))
              for t in heel_strikes]
    return TrialRecord("S01", task, 0, FrameSequence(frame_ts, images, spacing),
                       tuple(events), kin)


@pytest.fixture
def trial():
    return make_trial()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
