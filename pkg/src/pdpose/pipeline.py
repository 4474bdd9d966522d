"""Per-video preprocessing and feature extraction with caching.

Each video is cleaned and featurized once; subscore matrices are then
assembled from the cached per-joint vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .core import LIMB_JOINTS, Dataset, Joint, PoseSequence, Task, UPDRS_LABELS
from .features import (
    ROUTING,
    FeatureVector,
    concat,
    joint_vector,
    routed_vector,
    toe_tapping_features,
)
from .preprocessing import UDYSRS_JOINTS, prepare_displacements, toe_velocity

log = logging.getLogger(__name__)


@dataclass
class FeatureTable:
    video_ids: list[str]
    subject_ids: list[str]
    names: tuple[str, ...]
    X: np.ndarray

    def __len__(self):
        return len(self.video_ids)

    def take(self, rows) -> "FeatureTable":
        rows = list(rows)
        return FeatureTable([self.video_ids[i] for i in rows],
                            [self.subject_ids[i] for i in rows], self.names, self.X[rows])


def all_joints(task: Task) -> tuple[Joint, ...]:
    return UDYSRS_JOINTS if task.scale == "UDysRS" else LIMB_JOINTS


class FeatureExtractor:
    """Caches per-video feature vectors; failures are logged and remembered."""

    def __init__(self, config: RunConfig | None = None):
        self.config = config or RunConfig()
        self._joints: dict[str, dict[Joint, FeatureVector]] = {}
        self._toe: dict[str, dict[str, FeatureVector]] = {}
        self.failures: dict[str, str] = {}

    @property
    def welch(self) -> dict:
        return self.config.welch.kwargs()

    def joint_vectors(self, seq: PoseSequence) -> dict[Joint, FeatureVector]:
        if seq.video_id not in self._joints:
            cfg = self.config
            pieces = prepare_displacements(
                seq, all_joints(seq.task), cfg.butterworth_cutoff_hz,
                cfg.butterworth_order, cfg.discontinuity_fraction)
            out = {}
            for j, p in pieces.items():
                try:
                    out[j] = joint_vector(p, seq.fps, self.welch)
                except ValueError as exc:
                    log.info("%s: %s skipped (%s)", seq.video_id, j.value, exc)
            self._joints[seq.video_id] = out
        return self._joints[seq.video_id]

    def toe_vectors(self, seq: PoseSequence) -> dict[str, FeatureVector]:
        if seq.video_id not in self._toe:
            out = {}
            for side in UPDRS_LABELS:
                if seq.flows and side in seq.flows:
                    v = toe_velocity(seq, side, self.config.flow_nonzero)
                    out[side] = toe_tapping_features(v, seq.fps, self.welch).prefixed(side)
            self._toe[seq.video_id] = out
        return self._toe[seq.video_id]

    def subscore_vector(self, seq: PoseSequence, subscore: str) -> FeatureVector:
        if subscore not in ROUTING[seq.task]:
            raise ValueError(f"{seq.task.value} has no subscore {subscore!r}")
        if seq.task is Task.TOE_TAPPING:
            toe = self.toe_vectors(seq)
            if subscore not in toe:
                raise ValueError(f"video {seq.video_id}: no toe flow for side {subscore}")
            return toe[subscore]
        return routed_vector(seq.task, subscore, self.joint_vectors(seq), seq.video_id)

    def task_vector(self, seq: PoseSequence) -> FeatureVector:
        """Every available trajectory of the video, in a fixed joint order."""
        if seq.task is Task.TOE_TAPPING:
            toe = self.toe_vectors(seq)
            missing = [s for s in UPDRS_LABELS if s not in toe]
            if missing:
                raise ValueError(f"video {seq.video_id}: no toe flow for {', '.join(missing)}")
            return concat(toe[s] for s in UPDRS_LABELS)
        vecs = self.joint_vectors(seq)
        missing = [j.value for j in all_joints(seq.task) if j not in vecs]
        if missing:
            raise ValueError(f"video {seq.video_id}: missing joint(s) {', '.join(missing)}")
        return concat(vecs[j].prefixed(j.value) for j in all_joints(seq.task))

    def _safe(self, fn, seq):
        try:
            return fn(seq)
        except ValueError as exc:
            msg = str(exc)
            if self.failures.get(seq.video_id) != msg:
                log.warning("%s: feature extraction failed: %s", seq.video_id, msg)
            self.failures[seq.video_id] = msg
            return None

    def table(self, sequences, fn) -> FeatureTable:
        rows, names = [], None
        for seq in sequences:
            vec = self._safe(fn, seq)
            if vec is None:
                continue
            if names is None:
                names = vec.names
            elif vec.names != names:
                raise ValueError(f"video {seq.video_id}: feature schema differs from others")
            rows.append((seq, vec))
        return FeatureTable(
            [s.video_id for s, _ in rows],
            [s.subject_id for s, _ in rows],
            names or (),
            np.array([v.values for _, v in rows]).reshape(len(rows), len(names or ())),
        )

    def subscore_table(self, dataset: Dataset, task: Task, subscore: str) -> FeatureTable:
        return self.table(dataset.by_task(task), lambda s: self.subscore_vector(s, subscore))

    def task_table(self, dataset: Dataset, task: Task) -> FeatureTable:
        return self.table(dataset.by_task(task), self.task_vector)
