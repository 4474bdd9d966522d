"""Trajectory cleaning: camera-shake removal, discontinuity removal, box geometry,
optical-flow aggregation and head-length normalization.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from .core import LIMB_JOINTS, Joint, PoseSequence, Task
from .dsp import butterworth_lowpass, interpolate_gaps

log = logging.getLogger(__name__)

MAX_TRACKED_POINTS = 500
FLOW_NONZERO = 5.0e-4  # pixels/frame
DISCONTINUITY_FRACTION = 0.5  # of head length


@dataclass(frozen=True)
class Segment:
    start: int
    end: int  # inclusive
    samples: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        if self.end < self.start or len(self.samples) != self.end - self.start + 1:
            raise ValueError("segment samples must cover [start, end]")


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"degenerate bounding box {self}")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def estimate_head_length(seq: PoseSequence) -> float:
    """Median head-to-neck distance over frames where both are detected."""
    if Joint.HEAD not in seq.positions or Joint.NECK not in seq.positions:
        raise ValueError(f"{seq.video_id}: head and neck are required for head length")
    d = np.linalg.norm(seq.joint(Joint.HEAD) - seq.joint(Joint.NECK), axis=1)
    d = d[np.isfinite(d)]
    if d.size == 0:
        raise ValueError(f"{seq.video_id}: head and neck never detected together")
    hl = float(np.median(d))
    if hl <= 0:
        raise ValueError(f"{seq.video_id}: head length is zero")
    return hl


def camera_trajectory(tracks) -> np.ndarray:
    """Per-transition camera motion: component-wise median of background
    point displacements.

    Parameters
    ----------
    tracks : array (n_points, frames, 2), NaN where a point is not tracked

    Returns
    -------
    ndarray (frames - 1, 2)
    """
    tracks = np.asarray(tracks, dtype=float)
    if tracks.shape[0] > MAX_TRACKED_POINTS:
        raise ValueError(f"at most {MAX_TRACKED_POINTS} points may be tracked")
    steps = np.diff(tracks, axis=1)
    alive = np.isfinite(steps).all(axis=2)
    out = np.empty((tracks.shape[1] - 1, 2))
    for k in range(out.shape[0]):
        if not alive[:, k].any():
            raise ValueError(f"camera motion unobservable at frame {k}")
        out[k] = np.median(steps[alive[:, k], k], axis=0)
    return out


def stabilize(seq: PoseSequence, cam) -> PoseSequence:
    """Subtract the cumulative camera displacement from every joint."""
    cam = np.asarray(cam, dtype=float)
    if cam.shape != (seq.frames - 1, 2):
        raise ValueError(
            f"camera trajectory has {len(cam)} transitions, sequence has {seq.frames - 1}"
        )
    offset = np.vstack([np.zeros((1, 2)), np.cumsum(cam, axis=0)])
    positions = {j: p - offset for j, p in seq.positions.items()}
    return dataclasses.replace(seq, positions=positions)


def stabilize_sequence(seq: PoseSequence) -> PoseSequence:
    if seq.tracks is None:
        log.warning("%s: no background tracks, skipping camera-shake removal", seq.video_id)
        return seq
    return stabilize(seq, camera_trajectory(seq.tracks))


def split_segments(positions, confidences, threshold: float, offset: int = 0) -> list[Segment]:
    """Split a trajectory wherever the frame-to-frame step exceeds ``threshold``.

    Missing frames also end a segment. ``offset`` is added to frame indices.
    """
    positions = np.asarray(positions, dtype=float)
    confidences = np.asarray(confidences, dtype=float)
    present = np.isfinite(positions).all(axis=1)
    step = np.full(len(positions), np.inf)
    step[1:] = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    segs = []
    start = None
    for k in range(len(positions)):
        if not present[k]:
            if start is not None:
                segs.append(_segment(positions, confidences, start, k - 1, offset))
            start = None
        elif start is None:
            start = k
        elif step[k] > threshold:
            segs.append(_segment(positions, confidences, start, k - 1, offset))
            start = k
    if start is not None:
        segs.append(_segment(positions, confidences, start, len(positions) - 1, offset))
    return segs


def _segment(pos, conf, a, b, offset):
    return Segment(a + offset, b + offset, pos[a:b + 1].copy(), conf[a:b + 1].copy())


def group_segments(segments: list[Segment], threshold: float) -> list[Segment]:
    """Group spatially consistent segments and return the most confident group.

    A forward pass attaches each segment to the group whose last sample lies
    closest to the segment's first sample, if that distance is below
    ``threshold``; otherwise the segment opens a new group. The group with
    the highest median confidence wins (ties: more frames, then earliest).
    """
    if not segments:
        raise ValueError("no segments to group")
    groups: list[list[Segment]] = []
    for seg in segments:
        if groups:
            dists = [np.linalg.norm(seg.samples[0] - g[-1].samples[-1]) for g in groups]
            best = int(np.argmin(dists))
            if dists[best] < threshold:
                groups[best].append(seg)
                continue
        groups.append([seg])

    def rank(item):
        i, g = item
        conf = np.concatenate([s.confidences for s in g])
        conf = conf[np.isfinite(conf)]
        med = float(np.median(conf)) if conf.size else -np.inf
        return (med, sum(len(s.samples) for s in g), -i)

    _, best = max(enumerate(groups), key=rank)
    return best


def clean_trajectory(positions, confidences, head_length: float, offset: int = 0,
                     fraction: float = DISCONTINUITY_FRACTION):
    """Discontinuity removal: split, group, keep the confident group, fill gaps.

    Returns ``(start_frame, samples)``; the output is truncated to the span of
    the selected group.
    """
    thr = fraction * head_length
    segs = split_segments(positions, confidences, thr, offset)
    if not segs:
        raise ValueError("joint never detected")
    group = group_segments(segs, thr)
    return interpolate_gaps([(s.start, s.samples) for s in group])


def face_box_init(head, neck) -> BoundingBox:
    """Initial face box from the head-top and neck keypoints.

    A square centred between the two points, with side equal to their
    vertical distance; the bottom two thirds and middle half (horizontally)
    of it are kept.
    """
    head = np.asarray(head, dtype=float)
    neck = np.asarray(neck, dtype=float)
    side = neck[1] - head[1]
    if side == 0:
        raise ValueError("head and neck coincide vertically")
    if side < 0:
        raise ValueError("neck must lie below the head")
    cx, cy = (head + neck) / 2
    y_min = cy - side / 2
    return BoundingBox(cx - side / 4, y_min + side / 3, cx + side / 4, cy + side / 2)


def face_trajectory_from_skeleton(seq: PoseSequence) -> np.ndarray:
    """Per-frame centre of the face box; stand-in when no tracked face is supplied."""
    head, neck = seq.joint(Joint.HEAD), seq.joint(Joint.NECK)
    side = np.abs(neck[:, 1] - head[:, 1])
    mid = (head + neck) / 2
    return np.column_stack([mid[:, 0], mid[:, 1] + side / 6])


def toe_box(ankle, head_length: float, frame_w: float, frame_h: float) -> BoundingBox:
    """Square of side ``head_length`` hanging below the ankle, clipped to the frame."""
    if head_length <= 0:
        raise ValueError("head length must be > 0")
    ax, ay = np.asarray(ankle, dtype=float)
    x0, x1 = ax - head_length / 2, ax + head_length / 2
    y0, y1 = ay, ay + head_length
    x0, x1 = max(x0, 0.0), min(x1, float(frame_w))
    y0, y1 = max(y0, 0.0), min(y1, float(frame_h))
    if x1 <= x0 or y1 <= y0:
        raise ValueError("toe box lies outside the video frame")
    return BoundingBox(x0, y0, x1, y1)


def aggregate_flow(frames, nonzero_threshold: float = FLOW_NONZERO) -> np.ndarray:
    """Component-wise median of the non-zero flow vectors of each transition.

    Transitions with no vector above the threshold yield (0, 0).
    """
    out = np.zeros((len(frames), 2))
    for k, f in enumerate(frames):
        f = np.asarray(f, dtype=float).reshape(-1, 2)
        moving = f[np.linalg.norm(f, axis=1) > nonzero_threshold]
        if len(moving):
            out[k] = np.median(moving, axis=0)
    return out


def normalize_by_head_length(signal, head_length: float) -> np.ndarray:
    if head_length <= 0:
        raise ValueError("head length must be > 0")
    return np.asarray(signal, dtype=float) / head_length


# -- task routing -----------------------------------------------------------

UDYSRS_JOINTS = (
    Joint.FACE,
    Joint.RSHO, Joint.RELB, Joint.RWRI,
    Joint.LSHO, Joint.LELB, Joint.LWRI,
    Joint.RHIP, Joint.RKNE, Joint.RANK,
    Joint.LHIP, Joint.LKNE, Joint.LANK,
)


def _fill_present(p: np.ndarray) -> tuple[int, np.ndarray]:
    present = np.isfinite(p).all(axis=1)
    if not present.any():
        raise ValueError("joint never detected")
    idx = np.flatnonzero(present)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    return interpolate_gaps([(int(r[0]), p[r]) for r in runs])


def prepare_displacements(seq: PoseSequence, joints=None, cutoff_hz: float = 5.0,
                          order: int = 5, fraction: float = DISCONTINUITY_FRACTION
                          ) -> dict[Joint, list[np.ndarray]]:
    """Cleaned, head-length-normalized displacement pieces per joint.

    Communication and drinking: camera-shake removal then discontinuity
    removal; the face trajectory stands in for head and neck. Communication
    videos yield one piece per subtask. Leg agility: camera-shake removal
    then Butterworth smoothing.
    """
    if seq.task is Task.TOE_TAPPING:
        raise ValueError("toe tapping carries no displacement signal")
    hl = estimate_head_length(seq)
    stab = stabilize_sequence(seq)
    if joints is None:
        joints = UDYSRS_JOINTS if seq.task.scale == "UDysRS" else LIMB_JOINTS
    out: dict[Joint, list[np.ndarray]] = {}
    if seq.task is Task.LEG_AGILITY:
        for j in joints:
            if j not in stab.positions:
                continue
            _, filled = _fill_present(stab.joint(j))
            smooth = butterworth_lowpass(filled, seq.fps, cutoff_hz, order)
            out[j] = [normalize_by_head_length(smooth, hl)]
        return out

    if Joint.FACE in stab.positions:
        face = stab.joint(Joint.FACE)
    else:
        face = face_trajectory_from_skeleton(stab)
    ranges = seq.subtasks if seq.task is Task.COMMUNICATION and seq.subtasks else (
        (0, seq.frames - 1),)
    for j in joints:
        if j is Joint.FACE:
            pos = face
            conf = np.where(np.isfinite(face).all(axis=1), 1.0, np.nan)
        elif j in stab.positions:
            pos, conf = stab.joint(j), stab.confidence(j)
        else:
            continue
        pieces = []
        for a, b in ranges:
            try:
                _, cleaned = clean_trajectory(pos[a:b + 1], conf[a:b + 1], hl, a, fraction)
            except ValueError:
                log.info("%s: %s undetected in frames %d-%d", seq.video_id, j.value, a, b)
                continue
            pieces.append(normalize_by_head_length(cleaned, hl))
        if pieces:
            out[j] = pieces
    return out


def toe_velocity(seq: PoseSequence, side: str,
                 nonzero_threshold: float = FLOW_NONZERO) -> np.ndarray:
    """Aggregate toe velocity for one foot in head lengths per second."""
    if not seq.flows or side not in seq.flows:
        raise ValueError(f"{seq.video_id}: no optical flow for side {side}")
    hl = estimate_head_length(seq)
    v = aggregate_flow(seq.flows[side], nonzero_threshold)
    return normalize_by_head_length(v * seq.fps, hl)

