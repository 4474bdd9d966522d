"""Domain types: skeleton joints, pose sequences, clinical ratings, datasets."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

DEFAULT_FPS = 30.0


class Joint(str, enum.Enum):
    HEAD = "head"
    NECK = "neck"
    LSHO = "Lsho"
    RSHO = "Rsho"
    LELB = "Lelb"
    RELB = "Relb"
    LWRI = "Lwri"
    RWRI = "Rwri"
    LHIP = "Lhip"
    RHIP = "Rhip"
    LKNE = "Lkne"
    RKNE = "Rkne"
    LANK = "Lank"
    RANK = "Rank"
    # never produced by the pose estimator, only substituted for head/neck
    FACE = "face"


SKELETON = tuple(j for j in Joint if j is not Joint.FACE)
LIMB_JOINTS = tuple(j for j in SKELETON if j not in (Joint.HEAD, Joint.NECK))


class Task(str, enum.Enum):
    COMMUNICATION = "Communication"
    DRINKING = "Drinking"
    LEG_AGILITY = "LegAgility"
    TOE_TAPPING = "ToeTapping"

    @property
    def scale(self) -> str:
        return "UDysRS" if self in (Task.COMMUNICATION, Task.DRINKING) else "UPDRS3"


UDYSRS_LABELS = ("Neck", "Rarm", "Larm", "Trunk", "Rleg", "Lleg")
# rated by clinicians but never predicted; only used to derive the UDysRS total
UDYSRS_FACE = "Face"
UPDRS_LABELS = ("Right", "Left")


def subscore_labels(task: Task) -> tuple[str, ...]:
    return UDYSRS_LABELS if task.scale == "UDysRS" else UPDRS_LABELS


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PoseSequence:
    """Per-frame 2D joint positions and confidences for one task video.

    Absent samples are NaN in both ``positions`` and ``confidences``; (0, 0)
    is a valid pixel coordinate and is never used as a sentinel.

    Parameters
    ----------
    positions : mapping of Joint to (frames, 2) arrays
    confidences : mapping of Joint to (frames,) arrays in [0, 1]
    tracks : optional (n_tracks, frames, 2) background point positions
    flows : optional mapping ``{"Right": [...], "Left": [...]}`` with one
        (k, 2) array of flow vectors per frame transition (toe tapping)
    subtasks : inclusive frame ranges of communication subtasks
    """

    video_id: str
    subject_id: str
    task: Task
    positions: Mapping[Joint, np.ndarray]
    confidences: Mapping[Joint, np.ndarray] = field(default_factory=dict)
    fps: float = DEFAULT_FPS
    session_id: str | None = None
    frame_size: tuple[int, int] | None = None
    tracks: np.ndarray | None = None
    flows: Mapping[str, tuple[np.ndarray, ...]] | None = None
    subtasks: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(
            self, "positions", {Joint(j): _frozen(p) for j, p in self.positions.items()}
        )
        object.__setattr__(
            self, "confidences", {Joint(j): _frozen(c) for j, c in self.confidences.items()}
        )
        if self.tracks is not None:
            object.__setattr__(self, "tracks", _frozen(self.tracks))
        if self.flows is not None:
            object.__setattr__(
                self,
                "flows",
                {
                    side: tuple(_frozen(np.reshape(f, (-1, 2))) for f in frames)
                    for side, frames in self.flows.items()
                },
            )
        object.__setattr__(self, "subtasks", tuple((int(a), int(b)) for a, b in self.subtasks))
        if self.frame_size is not None:
            object.__setattr__(self, "frame_size", tuple(int(v) for v in self.frame_size))

    @property
    def frames(self) -> int:
        for p in self.positions.values():
            return len(p)
        if self.flows:
            return max(len(f) for f in self.flows.values()) + 1
        return 0

    @property
    def session(self) -> str:
        return self.session_id if self.session_id is not None else self.video_id

    def joint(self, j: Joint) -> np.ndarray:
        return self.positions[Joint(j)]

    def confidence(self, j: Joint) -> np.ndarray:
        """Confidences for ``j``; joints without them count as fully confident."""
        j = Joint(j)
        if j in self.confidences:
            return self.confidences[j]
        present = np.isfinite(self.positions[j]).all(axis=1)
        return np.where(present, 1.0, np.nan)

    def present(self, j: Joint) -> np.ndarray:
        return np.isfinite(self.positions[Joint(j)]).all(axis=1)


@dataclass(frozen=True)
class Subscore:
    label: str
    raters: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "raters", tuple(self.raters))

    @property
    def mean(self) -> float:
        return float(np.mean(self.raters)) if self.raters else float("nan")


@dataclass(frozen=True)
class RatingRecord:
    """Clinician ratings attached to one video.

    ``subscores`` is keyed by ``(task, label)``. Totals are per assessment
    session and are repeated on every video of that session.
    """

    video_id: str
    subscores: Mapping[tuple[Task, str], Subscore] = field(default_factory=dict)
    global_spontaneity: float | None = None
    udysrs_total: float | None = None
    updrs3_total: float | None = None

    def mean(self, task: Task, label: str) -> float | None:
        s = self.subscores.get((Task(task), label))
        return None if s is None or not s.raters else s.mean


def derive_udysrs_total(records) -> float | None:
    """Sum over the seven body parts of the highest mean subscore across tasks.

    Returns None unless every body part (face included) is rated somewhere.
    """
    best: dict[str, float] = {}
    for rec in records:
        for (task, label), s in rec.subscores.items():
            if task.scale != "UDysRS" or not s.raters:
                continue
            best[label] = max(best.get(label, 0.0), s.mean)
    parts = (UDYSRS_FACE,) + UDYSRS_LABELS
    if not all(p in best for p in parts):
        return None
    return float(sum(best[p] for p in parts))


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[PoseSequence, ...]
    ratings: Mapping[str, RatingRecord]

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        object.__setattr__(self, "ratings", dict(self.ratings))

    @property
    def subjects(self) -> set[str]:
        return {s.subject_id for s in self.sequences}

    def by_task(self, task: Task) -> list[PoseSequence]:
        return [s for s in self.sequences if s.task == Task(task)]

    def rating(self, video_id: str) -> RatingRecord:
        return self.ratings.get(video_id) or RatingRecord(video_id)


@dataclass(frozen=True, order=True)
class Finding:
    video_id: str
    field: str
    message: str


def _sequence_findings(seq: PoseSequence) -> list[Finding]:
    out = []
    vid = seq.video_id

    def add(fld, msg):
        out.append(Finding(vid, fld, msg))

    if not np.isfinite(seq.fps) or seq.fps <= 0:
        add("fps", "fps must be > 0")
    n = seq.frames
    if n < 2:
        add("frames", "frames must be >= 2")
    for j, p in seq.positions.items():
        if p.ndim != 2 or p.shape[1] != 2:
            add(f"positions.{j.value}", "positions must be (frames, 2)")
        elif len(p) != n:
            add(f"positions.{j.value}", f"expected {n} samples, got {len(p)}")
    for j, c in seq.confidences.items():
        if j not in seq.positions:
            add(f"confidences.{j.value}", "confidence given for absent joint")
        elif len(c) != n:
            add(f"confidences.{j.value}", f"expected {n} samples, got {len(c)}")
        finite = c[np.isfinite(c)]
        if np.any((finite < 0) | (finite > 1)):
            add(f"confidences.{j.value}", "confidences must lie in [0, 1]")
    if seq.tracks is not None and (seq.tracks.ndim != 3 or seq.tracks.shape[1] != n):
        add("tracks", "tracks must be (n_tracks, frames, 2)")
    if seq.tracks is not None and seq.tracks.ndim == 3 and seq.tracks.shape[0] > 500:
        add("tracks", "at most 500 background points may be tracked")
    if seq.flows:
        for side, frames in seq.flows.items():
            if len(frames) != n - 1:
                add(f"flows.{side}", f"expected {n - 1} transitions, got {len(frames)}")
    prev_end = -1
    for a, b in sorted(seq.subtasks):
        if not 0 <= a <= b < n:
            add("subtasks", f"subtask [{a}, {b}] outside [0, {n})")
        if a <= prev_end:
            add("subtasks", f"subtask [{a}, {b}] overlaps previous")
        prev_end = max(prev_end, b)
    if seq.subtasks and seq.task is not Task.COMMUNICATION:
        add("subtasks", "only communication videos carry subtasks")
    return out


def _rating_findings(rec: RatingRecord) -> list[Finding]:
    out = []
    for (task, label), s in rec.subscores.items():
        fld = f"ratings.{task.value}.{label}"
        if label not in subscore_labels(task) and label != UDYSRS_FACE:
            out.append(Finding(rec.video_id, fld, "unknown subscore label"))
        if any(r not in (0, 1, 2, 3, 4) for r in s.raters):
            out.append(Finding(rec.video_id, fld, "ratings must be integers in 0..4"))
    bounds = (("global_spontaneity", 4), ("udysrs_total", 28), ("updrs3_total", 112))
    for name, hi in bounds:
        v = getattr(rec, name)
        if v is not None and not 0 <= v <= hi:
            out.append(Finding(rec.video_id, name, f"{name} must lie in [0, {hi}]"))
    return out


def validate_dataset(d: Dataset) -> list[Finding]:
    """Check every dataset invariant; one finding per violation, sorted."""
    findings = []
    seen = set()
    for seq in d.sequences:
        findings += _sequence_findings(seq)
        if seq.video_id in seen:
            findings.append(Finding(seq.video_id, "video_id", "duplicate video_id"))
        seen.add(seq.video_id)
        if seq.video_id not in d.ratings:
            findings.append(
                Finding(seq.video_id, "ratings", f"no rating record for video {seq.video_id}")
            )
    for rec in d.ratings.values():
        findings += _rating_findings(rec)
    sessions: dict[tuple[str, str], list[RatingRecord]] = {}
    for seq in d.sequences:
        if seq.video_id in d.ratings:
            sessions.setdefault((seq.subject_id, seq.session), []).append(d.ratings[seq.video_id])
    for (_, session), recs in sessions.items():
        derived = derive_udysrs_total(recs)
        for rec in recs:
            if derived is not None and rec.udysrs_total is not None:
                if abs(derived - rec.udysrs_total) > 1e-9:
                    findings.append(
                        Finding(
                            rec.video_id,
                            "udysrs_total",
                            f"total {rec.udysrs_total} differs from derived {derived}",
                        )
                    )
    if len(d.subjects) < 2:
        findings.append(Finding("", "subjects", "at least 2 subjects are required"))
    return sorted(set(findings))
