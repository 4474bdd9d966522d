import numpy as np
import pytest

from pdpose.core import Dataset, Joint, PoseSequence, RatingRecord, Subscore, Task
from pdpose.synthetic import make_cohort


def static_sequence(video_id="v1", subject_id="s1", task=Task.COMMUNICATION, frames=60,
                    fps=30.0, hl=60.0, **kw):
    """Every skeleton joint parked at a fixed spot, head length ``hl``."""
    positions = {}
    for i, j in enumerate(j for j in Joint if j is not Joint.FACE):
        positions[j] = np.tile([100.0 + 10 * i, 200.0], (frames, 1))
    positions[Joint.HEAD] = np.tile([100.0, 50.0], (frames, 1))
    positions[Joint.NECK] = np.tile([100.0, 50.0 + hl], (frames, 1))
    confidences = {j: np.full(frames, 0.9) for j in positions}
    return PoseSequence(video_id=video_id, subject_id=subject_id, task=task, fps=fps,
                        positions=positions, confidences=confidences, **kw)


def rated(video_id, task=Task.COMMUNICATION, rating=1):
    labels = ("Neck", "Rarm") if Task(task).scale == "UDysRS" else ("Right", "Left")
    return RatingRecord(video_id, {(Task(task), lab): Subscore(lab, (rating, rating))
                                   for lab in labels})


def two_subject_dataset():
    seqs = [static_sequence("a1", "A"), static_sequence("b1", "B")]
    return Dataset(seqs, {s.video_id: rated(s.video_id) for s in seqs})


@pytest.fixture
def tiny_dataset():
    return two_subject_dataset()


@pytest.fixture(scope="session")
def small_cohort():
    """Four subjects, four sessions each, every task."""
    return make_cohort(4, 4, seed=3, tasks=tuple(Task))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
