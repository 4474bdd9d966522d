"""Synthetic cohorts with known severity, for end-to-end checks and demos.

Dyskinetic videos carry elliptical 1-4 Hz oscillation of every limb joint
with a peak-to-peak amplitude (in head lengths) proportional to the rating;
at 30 fps the fastest such motion still moves less than half a head length
per frame, so discontinuity removal leaves it intact. Quiet videos only
carry detector jitter. Camera shake, background tracks and
occasional low-confidence mislocalizations are included so the whole
preprocessing chain is exercised.
"""

from __future__ import annotations

import numpy as np

from .core import (
    LIMB_JOINTS,
    UDYSRS_FACE,
    UDYSRS_LABELS,
    Dataset,
    Joint,
    PoseSequence,
    RatingRecord,
    Subscore,
    Task,
    derive_udysrs_total,
)

FRAME_W, FRAME_H = 640, 480

# joint offsets from the neck, in head lengths (image y grows downward)
POSE = {
    Joint.HEAD: (0.0, -1.0),
    Joint.NECK: (0.0, 0.0),
    Joint.RSHO: (-0.8, 0.2), Joint.LSHO: (0.8, 0.2),
    Joint.RELB: (-1.0, 1.2), Joint.LELB: (1.0, 1.2),
    Joint.RWRI: (-0.7, 2.0), Joint.LWRI: (0.7, 2.0),
    Joint.RHIP: (-0.5, 2.6), Joint.LHIP: (0.5, 2.6),
    Joint.RKNE: (-0.6, 3.3), Joint.LKNE: (0.6, 3.3),
    Joint.RANK: (-0.6, 4.2), Joint.LANK: (0.6, 4.2),
}
DURATION_S = {Task.COMMUNICATION: 12.0, Task.DRINKING: 7.0,
              Task.LEG_AGILITY: 10.0, Task.TOE_TAPPING: 9.0}
LEG_JOINTS = {"Right": (Joint.RHIP, Joint.RKNE, Joint.RANK),
              "Left": (Joint.LHIP, Joint.LKNE, Joint.LANK)}


def _raters(mean: float, rng, n=2) -> tuple[int, ...]:
    """Integer ratings whose average tracks ``mean``."""
    lo = int(np.floor(mean))
    frac = mean - lo
    return tuple(int(np.clip(lo + (rng.random() < frac), 0, 4)) for _ in range(n))


def _camera(frames, rng, scale):
    return np.cumsum(rng.normal(0, 0.3 * scale, (frames, 2)), axis=0)


def _tracks(cam, rng, n=40):
    base = rng.uniform([0, 0], [FRAME_W, FRAME_H], (n, 1, 2))
    return base + cam[None] + rng.normal(0, 0.05, (n, len(cam), 2))


def _skeleton_video(task, t, hl, origin, rng, motion):
    """Positions and confidences for every skeleton joint.

    ``motion`` maps a joint to an (frames, 2) displacement in head lengths.
    """
    frames = len(t)
    cam = _camera(frames, rng, hl / 60)
    positions, confidences = {}, {}
    for j, (dx, dy) in POSE.items():
        p = origin + hl * np.array([dx, dy]) + np.zeros((frames, 2))
        p = p + hl * motion.get(j, 0.0)
        p = p + rng.normal(0, 0.01 * hl, (frames, 2)) + cam
        c = np.clip(rng.normal(0.8, 0.05, frames), 0, 1)
        positions[j] = p
        confidences[j] = c
    # transient low-confidence mislocalization on one joint
    if rng.random() < 0.3 and frames > 60:
        j = LIMB_JOINTS[rng.integers(len(LIMB_JOINTS))]
        k = int(rng.integers(20, frames - 40))
        positions[j][k:k + 15] += hl * np.array([3.0, -2.0])
        confidences[j][k:k + 15] = 0.1
    return positions, confidences, _tracks(cam, rng)


def _elliptical(t, amp, freq, rng):
    """Elliptical motion with peak-to-peak extent ``amp`` along x."""
    amp = amp / 2
    phase = rng.uniform(0, 2 * np.pi)
    ecc = rng.uniform(0.4, 1.0)
    return np.column_stack([amp * np.cos(2 * np.pi * freq * t + phase),
                            amp * ecc * np.sin(2 * np.pi * freq * t + phase)])


def make_sequence(task: Task, video_id, subject_id, session_id, rng, hl, origin,
                  lid_amp=0.0, lid_freq=2.0, leg_sev=None, toe_sev=None, fps=30.0):
    task = Task(task)
    frames = int(DURATION_S[task] * fps)
    t = np.arange(frames) / fps
    motion = {}
    if task.scale == "UDysRS" and lid_amp > 0:
        for j in LIMB_JOINTS:
            motion[j] = _elliptical(t, lid_amp, lid_freq * rng.uniform(0.9, 1.1), rng)
        motion[Joint.HEAD] = _elliptical(t, 0.5 * lid_amp, lid_freq, rng)
        motion[Joint.NECK] = motion[Joint.HEAD]
    if task is Task.LEG_AGILITY:
        for side, joints in LEG_JOINTS.items():
            sev = leg_sev[side]
            amp, freq = 0.9 * (1 - sev / 5), 3.0 - 0.5 * sev
            stomp = np.column_stack([np.zeros(frames), amp * np.sin(2 * np.pi * freq * t)])
            for w, j in zip((0.2, 0.6, 1.0), joints):
                motion[j] = w * stomp
    positions, confidences, tracks = _skeleton_video(task, t, hl, origin, rng, motion)
    flows = None
    if task is Task.TOE_TAPPING:
        flows = {}
        for side in ("Right", "Left"):
            sev = toe_sev[side]
            freq = 3.0 - 0.5 * sev
            # peak toe speed in pixels/frame for a 0-0.4 head-length excursion
            peak = 0.4 * (1 - sev / 5) * hl * 2 * np.pi * freq / fps
            vy = peak * np.cos(2 * np.pi * freq * t[:-1])
            per_frame = []
            for k in range(frames - 1):
                n_move = int(rng.integers(20, 40))
                moving = np.column_stack([rng.normal(0, 0.05 * abs(vy[k]) + 1e-3, n_move),
                                          vy[k] + rng.normal(0, 0.05 * abs(vy[k]) + 1e-3, n_move)])
                still = np.zeros((int(rng.integers(5, 30)), 2))
                per_frame.append(np.vstack([moving, still]))
            flows[side] = per_frame
    subtasks = ()
    if task is Task.COMMUNICATION:
        cut = [0, frames // 3, 2 * frames // 3, frames]
        subtasks = tuple((cut[i] + (5 if i else 0), cut[i + 1] - 1) for i in range(3))
    return PoseSequence(video_id=video_id, subject_id=subject_id, session_id=session_id,
                        task=task, fps=fps, positions=positions, confidences=confidences,
                        frame_size=(FRAME_W, FRAME_H), tracks=tracks, flows=flows,
                        subtasks=subtasks)


def make_cohort(n_subjects: int = 8, sessions_per_subject: int = 6, seed: int = 0,
                tasks=(Task.COMMUNICATION,), fps: float = 30.0) -> Dataset:
    """Cohort where half of each subject's sessions are dyskinetic.

    Dyskinesia amplitudes (peak-to-peak) span 0.3-1.0 head lengths at 1-4 Hz
    and map to a mean rating of four times the amplitude; quiet sessions are
    rated 0.
    Parkinsonian severities for leg agility, toe tapping and global
    spontaneity are drawn independently.
    """
    rng = np.random.default_rng(seed)
    tasks = [Task(t) for t in tasks]
    sequences, ratings = [], {}
    for s in range(n_subjects):
        subject = f"S{s + 1:02d}"
        hl = rng.uniform(45, 75)
        origin = np.array([rng.uniform(260, 380), rng.uniform(60, 90)])
        n_dys = sessions_per_subject // 2
        amps = np.linspace(0.3, 1.0, n_dys) + rng.uniform(-0.03, 0.03, n_dys)
        plan = [float(np.clip(a, 0.3, 1.0)) for a in amps] + [0.0] * (sessions_per_subject - n_dys)
        plan = [plan[i] for i in rng.permutation(len(plan))]
        for v, amp in enumerate(plan):
            session = f"{subject}-V{v + 1}"
            freq = rng.uniform(1.0, 4.0)
            leg = {side: float(rng.uniform(0, 4)) for side in ("Right", "Left")}
            toe = {side: float(rng.uniform(0, 4)) for side in ("Right", "Left")}
            spont = float(np.round(rng.uniform(0, 3) * 2) / 2)
            session_recs = []
            for task in tasks:
                vid = f"{session}-{task.value}"
                sequences.append(make_sequence(task, vid, subject, session, rng, hl, origin,
                                               lid_amp=amp, lid_freq=freq, leg_sev=leg,
                                               toe_sev=toe, fps=fps))
                subs = {}
                if task.scale == "UDysRS":
                    for lab in UDYSRS_LABELS + (UDYSRS_FACE,):
                        subs[(task, lab)] = Subscore(lab, _raters(4 * amp, rng))
                elif task is Task.LEG_AGILITY:
                    subs = {(task, side): Subscore(side, _raters(leg[side], rng)) for side in leg}
                else:
                    subs = {(task, side): Subscore(side, _raters(toe[side], rng)) for side in toe}
                session_recs.append(RatingRecord(vid, subs,
                                                 global_spontaneity=spont if task is Task.COMMUNICATION else None))
            udysrs = derive_udysrs_total(session_recs)
            item_sum = sum(r.mean(task, side) or 0.0 for r in session_recs
                           for task in (Task.LEG_AGILITY, Task.TOE_TAPPING) for side in ("Right", "Left"))
            updrs = float(np.clip(12 + 3 * item_sum + 4 * spont, 0, 112))
            for rec in session_recs:
                ratings[rec.video_id] = RatingRecord(rec.video_id, rec.subscores,
                                                     rec.global_spontaneity, udysrs, updrs)
    return Dataset(tuple(sequences), ratings)
