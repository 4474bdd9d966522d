"""Reading and writing trajectories, ratings, feature matrices and models.

Trajectory files are JSON, one per video::

    {
      "schema": "pdpose-trajectory/1",
      "video_id": "v001", "subject_id": "s01", "session_id": "s01-t30",
      "task": "Communication", "fps": 30, "frames": 900,
      "frame_size": [640, 480],
      "joints": {"head": [[x, y, conf], null, ...], "neck": [...], ...},
      "face": [[x, y], ...],
      "background_tracks": [[[x, y], null, ...], ...],
      "flow": {"Right": [[[dx, dy], ...], ...], "Left": [...]},
      "subtasks": [[0, 299], [300, 899]]
    }

Only ``video_id``, ``subject_id``, ``task`` and ``joints`` are required;
``null`` marks a frame where a point was not detected. ``flow`` holds one
list of vectors per frame transition, already restricted to the toe box.

Ratings are CSV with columns ``video_id,task,subscore,rater,rating``.
Body-part rows carry integer ratings 0-4. Three special subscores carry
per-video aggregates: ``UPDRS3.14`` (global spontaneity of movement, on the
communication task), ``UDysRS_total`` and ``UPDRS3_total``; several rows
for one of them are averaged.
"""

from __future__ import annotations

import csv
import glob
import json
import logging
from collections import defaultdict
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_FPS,
    Dataset,
    Joint,
    PoseSequence,
    RatingRecord,
    Subscore,
    Task,
    validate_dataset,
)
from .forest import ForestModel

log = logging.getLogger(__name__)

TRAJECTORY_SCHEMA = "pdpose-trajectory/1"
MODEL_BUNDLE = "pdpose-model-bundle/1"
SPONTANEITY = "UPDRS3.14"
TOTALS = {"UDysRS_total": ("udysrs_total", 28), "UPDRS3_total": ("updrs3_total", 112)}
RATING_COLUMNS = ("video_id", "task", "subscore", "rater", "rating")


class DataError(ValueError):
    """Malformed input; the message names the file, key or line, and reason."""


def _points(rows, width, where):
    out = np.full((len(rows), width), np.nan)
    for k, r in enumerate(rows):
        if r is None:
            continue
        if len(r) != width:
            raise DataError(f"{where}[{k}]: expected {width} values, got {len(r)}")
        vals = [np.nan if v is None else float(v) for v in r]
        if not all(np.isfinite(float(v)) for v in r if v is not None):
            raise DataError(f"{where}[{k}]: non-finite value")
        out[k] = vals
    return out


def sequence_from_dict(d: dict, source: str = "<dict>") -> PoseSequence:
    try:
        for key in ("video_id", "subject_id", "task", "joints"):
            if key not in d:
                raise DataError(f"{source}: missing key {key!r}")
        try:
            task = Task(d["task"])
        except ValueError:
            raise DataError(f"{source}: task: unknown task {d['task']!r}") from None
        positions, confidences = {}, {}
        for name, rows in d["joints"].items():
            try:
                j = Joint(name)
            except ValueError:
                raise DataError(f"{source}: joints.{name}: unknown joint") from None
            arr = _points(rows, 3, f"{source}: joints.{name}")
            positions[j] = arr[:, :2]
            conf = arr[:, 2]
            # a detection without confidence counts as fully confident
            conf[np.isfinite(arr[:, :2]).all(axis=1) & ~np.isfinite(conf)] = 1.0
            confidences[j] = conf
        if d.get("face") is not None:
            positions[Joint.FACE] = _points(d["face"], 2, f"{source}: face")
        frames = d.get("frames")
        lengths = {len(p) for p in positions.values()}
        if frames is not None and lengths and lengths != {frames}:
            raise DataError(f"{source}: joints: array lengths {sorted(lengths)} != frames {frames}")
        tracks = None
        if d.get("background_tracks") is not None:
            tracks = np.array([_points(t, 2, f"{source}: background_tracks[{i}]")
                               for i, t in enumerate(d["background_tracks"])]).reshape(
                len(d["background_tracks"]), -1, 2)
        flows = None
        if d.get("flow") is not None:
            flows = {side: tuple(np.array(f, dtype=float).reshape(-1, 2) for f in frames_)
                     for side, frames_ in d["flow"].items()}
        return PoseSequence(
            video_id=str(d["video_id"]),
            subject_id=str(d["subject_id"]),
            session_id=str(d["session_id"]) if d.get("session_id") is not None else None,
            task=task,
            fps=float(d.get("fps") or DEFAULT_FPS),
            positions=positions,
            confidences=confidences,
            frame_size=tuple(d["frame_size"]) if d.get("frame_size") else None,
            tracks=tracks,
            flows=flows,
            subtasks=tuple(tuple(r) for r in d.get("subtasks") or ()),
        )
    except DataError:
        raise
    except (TypeError, ValueError) as exc:
        raise DataError(f"{source}: {exc}") from None


def _nan_to_none(arr):
    return [None if not np.all(np.isfinite(r)) else [float(v) for v in r] for r in arr]


def sequence_to_dict(seq: PoseSequence) -> dict:
    joints = {}
    for j, p in seq.positions.items():
        if j is Joint.FACE:
            continue
        conf = seq.confidence(j)
        rows = np.column_stack([p, conf])
        joints[j.value] = [
            None if not np.all(np.isfinite(r[:2])) else
            [float(r[0]), float(r[1]), float(r[2]) if np.isfinite(r[2]) else None]
            for r in rows
        ]
    d = {
        "schema": TRAJECTORY_SCHEMA,
        "video_id": seq.video_id,
        "subject_id": seq.subject_id,
        "session_id": seq.session_id,
        "task": seq.task.value,
        "fps": seq.fps,
        "frames": seq.frames,
        "frame_size": list(seq.frame_size) if seq.frame_size else None,
        "joints": joints,
        "subtasks": [list(r) for r in seq.subtasks],
    }
    if Joint.FACE in seq.positions:
        d["face"] = _nan_to_none(seq.joint(Joint.FACE))
    if seq.tracks is not None:
        d["background_tracks"] = [_nan_to_none(t) for t in seq.tracks]
    if seq.flows is not None:
        d["flow"] = {side: [f.tolist() for f in frames] for side, frames in seq.flows.items()}
    return d


def load_trajectory(path) -> PoseSequence:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return sequence_from_dict(data, str(path))


def save_trajectory(seq: PoseSequence, path) -> None:
    Path(path).write_text(json.dumps(sequence_to_dict(seq)) + "\n", encoding="utf-8")


def convert_joint_csv(path, video_id: str, subject_id: str, task: str,
                      fps: float = DEFAULT_FPS, frames: int | None = None) -> dict:
    """Turn a long-format joint CSV (frame, joint, x, y[, confidence]) into a
    trajectory dict. Frames without a row for a joint are left undetected.
    """
    rows = defaultdict(dict)
    last = -1
    with open(path, newline="", encoding="utf-8") as fh:
        for line, r in enumerate(csv.DictReader(fh), start=2):
            try:
                k = int(r["frame"])
                j = Joint(r["joint"]).value
                c = r.get("confidence")
                rows[j][k] = [float(r["x"]), float(r["y"]), float(c) if c not in (None, "") else None]
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: line {line}: {exc}") from None
            last = max(last, k)
    n = frames if frames is not None else last + 1
    return {
        "schema": TRAJECTORY_SCHEMA,
        "video_id": video_id,
        "subject_id": subject_id,
        "task": task,
        "fps": fps,
        "frames": n,
        "joints": {j: [v.get(k) for k in range(n)] for j, v in sorted(rows.items())},
    }


def load_ratings(paths) -> dict[str, RatingRecord]:
    raw: dict[str, dict] = defaultdict(lambda: {"subscores": defaultdict(list), "agg": defaultdict(list)})
    for path in _expand(paths, "*.csv"):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = set(RATING_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise DataError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
            for line, r in enumerate(reader, start=2):
                where = f"{path}: line {line}"
                vid, sub = r["video_id"], r["subscore"]
                try:
                    val = float(r["rating"])
                except ValueError:
                    raise DataError(f"{where}: rating: not a number {r['rating']!r}") from None
                if sub in TOTALS:
                    hi = TOTALS[sub][1]
                    if not 0 <= val <= hi:
                        raise DataError(f"{where}: rating: {sub} must lie in [0, {hi}], got {val}")
                    raw[vid]["agg"][sub].append(val)
                    continue
                if sub == SPONTANEITY:
                    if not 0 <= val <= 4:
                        raise DataError(f"{where}: rating: {sub} must lie in [0, 4], got {val}")
                    raw[vid]["agg"][sub].append(val)
                    continue
                if val not in (0, 1, 2, 3, 4):
                    raise DataError(f"{where}: rating: must be an integer in 0..4, got {r['rating']}")
                try:
                    task = Task(r["task"])
                except ValueError:
                    raise DataError(f"{where}: task: unknown task {r['task']!r}") from None
                raw[vid]["subscores"][(task, sub)].append(int(val))
    out = {}
    for vid, d in raw.items():
        agg = {k: float(np.mean(v)) for k, v in d["agg"].items()}
        out[vid] = RatingRecord(
            video_id=vid,
            subscores={k: Subscore(k[1], tuple(v)) for k, v in d["subscores"].items()},
            global_spontaneity=agg.get(SPONTANEITY),
            udysrs_total=agg.get("UDysRS_total"),
            updrs3_total=agg.get("UPDRS3_total"),
        )
    return out


def save_ratings(ratings: dict[str, RatingRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATING_COLUMNS)
        for vid in sorted(ratings):
            rec = ratings[vid]
            for (task, label), s in sorted(rec.subscores.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
                for i, r in enumerate(s.raters):
                    w.writerow([vid, task.value, label, i, r])
            if rec.global_spontaneity is not None:
                w.writerow([vid, Task.COMMUNICATION.value, SPONTANEITY, 0, repr(rec.global_spontaneity)])
            for sub, (attr, _) in TOTALS.items():
                v = getattr(rec, attr)
                if v is not None:
                    w.writerow([vid, "", sub, 0, repr(v)])


def _expand(paths, pattern: str) -> list[Path]:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out += sorted(p.glob(pattern))
        elif any(ch in str(p) for ch in "*?["):
            out += sorted(Path(x) for x in glob.glob(str(p)))
        elif p.exists():
            out.append(p)
        else:
            raise DataError(f"{p}: no such file or directory")
    return out


def load_dataset(trajectories, ratings) -> Dataset:
    """Load trajectory JSON files (or directories of them) and rating CSVs.

    Schema errors raise :class:`DataError`; invariant violations found by
    :func:`validate_dataset` are logged as warnings.
    """
    seqs = [load_trajectory(p) for p in _expand(trajectories, "*.json")]
    d = Dataset(tuple(sorted(seqs, key=lambda s: s.video_id)), load_ratings(ratings))
    for f in validate_dataset(d):
        log.warning("%s: %s: %s", f.video_id or "<dataset>", f.field, f.message)
    return d


def save_dataset(d: Dataset, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    traj = directory / "trajectories"
    traj.mkdir(parents=True, exist_ok=True)
    for seq in d.sequences:
        save_trajectory(seq, traj / f"{seq.video_id}.json")
    ratings = directory / "ratings.csv"
    save_ratings(d.ratings, ratings)
    return traj, ratings


# -- feature matrices and models ------------------------------------------------

def write_feature_csv(path, table, fingerprint: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "subject_id", "config_fingerprint", *table.names])
        for vid, sub, row in zip(table.video_ids, table.subject_ids, table.X):
            w.writerow([vid, sub, fingerprint, *(repr(float(v)) for v in row)])


def read_feature_csv(path):
    from .pipeline import FeatureTable

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    names = tuple(header[3:])
    X = np.array([[float(v) for v in r[3:]] for r in rows]).reshape(len(rows), len(names))
    return FeatureTable([r[0] for r in rows], [r[1] for r in rows], names, X)


def save_model_bundle(path, models: list[dict], fingerprint: str, config: dict) -> None:
    """``models`` entries: ``{"task", "subscore", "mode", "model": ForestModel}``."""
    payload = {
        "format": MODEL_BUNDLE,
        "config_fingerprint": fingerprint,
        "config": config,
        "models": [
            {"task": m["task"], "subscore": m["subscore"], "mode": m["mode"],
             "forest": m["model"].to_dict()}
            for m in models
        ],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_model_bundle(path) -> dict:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("format") != MODEL_BUNDLE:
        raise DataError(f"{path}: not a model bundle (format {d.get('format')!r})")
    for m in d["models"]:
        m["model"] = ForestModel.from_dict(m.pop("forest"))
    return d
