import numpy as np
import pytest

from cuereenact.motion import MotionSequence
from cuereenact.skeleton import default_skeleton, rest_pose

SK = default_skeleton()


def static_motion(n=20, fps=20.0, lift=0.0):
    frames = np.repeat(rest_pose()[None], n, axis=0)
    frames[:, :, 1] += lift
    return MotionSequence(SK, fps, frames)


def motion_from(frames, fps=20.0):
    return MotionSequence(SK, fps, frames)


@pytest.fixture
def skeleton():
    return SK


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
