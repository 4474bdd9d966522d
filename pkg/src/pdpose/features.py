"""Per-joint kinematic, spectral and convex-hull features.

Standard joints get 32 features (15 kinematic, 2 x 8 spectral, hull area).
Toe tapping, which only has an aggregate velocity, gets 95 (3 x 21
kinematic, 4 x 8 spectral).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import Joint, Task
from .dsp import SAVGOL_WINDOW, Spectrum, savgol, welch_psd, welch_psd_real

log = logging.getLogger(__name__)

STATS = ("max", "median", "mean", "std", "iqr")
EXTENDED_STATS = STATS + ("skew", "kurtosis")
SPECTRAL = ("peak", "entropy", "total_power", "half_point",
            "band_0.5_1", "band_gt2", "band_gt4", "band_gt6")
# (low, high, low inclusive); "0.5-1 Hz" includes both ends, "> k Hz" is strict
BANDS = ((0.5, 1.0, True), (2.0, np.inf, False), (4.0, np.inf, False), (6.0, np.inf, False))

STANDARD_NAMES = tuple(
    [f"{q}_{s}" for q in ("speed", "accel", "jerk") for s in STATS]
    + [f"{sig}_psd_{s}" for sig in ("disp", "vel") for s in SPECTRAL]
    + ["hull_area"]
)
TOETAP_NAMES = tuple(
    [f"{sig}{lvl}_{s}" for sig in ("speed", "vx", "vy") for lvl in ("", "_d1", "_d2")
     for s in EXTENDED_STATS]
    + [f"{psd}_{s}" for psd in ("vel_psd", "vx_psd", "vy_psd", "speed_psd") for s in SPECTRAL]
)

ROUTING: dict[Task, dict[str, tuple[Joint, ...]]] = {
    Task.COMMUNICATION: {
        "Neck": (Joint.FACE,),
        "Rarm": (Joint.RSHO, Joint.RELB, Joint.RWRI),
        "Larm": (Joint.LSHO, Joint.LELB, Joint.LWRI),
        "Trunk": (Joint.RSHO, Joint.LSHO),
        "Rleg": (Joint.RHIP, Joint.RKNE, Joint.RANK),
        "Lleg": (Joint.LHIP, Joint.LKNE, Joint.LANK),
    },
    Task.LEG_AGILITY: {
        "Right": (Joint.RHIP, Joint.RKNE, Joint.RANK),
        "Left": (Joint.LHIP, Joint.LKNE, Joint.LANK),
    },
    # the ankle only places the flow box; features come from the flow
    Task.TOE_TAPPING: {"Right": (Joint.RANK,), "Left": (Joint.LANK,)},
}
ROUTING[Task.DRINKING] = ROUTING[Task.COMMUNICATION]


@dataclass(frozen=True)
class FeatureVector:
    schema_id: str
    names: tuple[str, ...]
    values: np.ndarray
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "names", tuple(self.names))
        if len(values) != len(self.names):
            raise ValueError(f"{len(values)} values for {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def prefixed(self, prefix: str) -> "FeatureVector":
        return FeatureVector(self.schema_id, [f"{prefix}.{n}" for n in self.names],
                             self.values, self.flags)


def concat(vectors, schema_id: str = "task-assembled") -> FeatureVector:
    vectors = list(vectors)
    return FeatureVector(
        schema_id,
        [n for v in vectors for n in v.names],
        np.concatenate([v.values for v in vectors]) if vectors else np.empty(0),
        tuple(f for v in vectors for f in v.flags),
    )


def _stats(x: np.ndarray) -> list[float]:
    q1, q3 = np.percentile(x, [25, 75])
    return [x.max(), np.median(x), x.mean(), x.std(), q3 - q1]


def _shape_stats(x: np.ndarray) -> tuple[list[float], bool]:
    # skewness g1 and excess kurtosis g2; zero for a flat signal
    # scipy yields nan when the spread vanishes against the mean, so a
    # numerically flat signal is treated like an exactly flat one
    if np.ptp(x) == 0:
        return [0.0, 0.0], True
    shape = [float(stats.skew(x)), float(stats.kurtosis(x))]
    if not np.all(np.isfinite(shape)):
        return [0.0, 0.0], True
    return shape, False


def _check_length(n: int):
    if n < SAVGOL_WINDOW:
        raise ValueError(f"signal of {n} samples too short for smoothing window")


def kinematic_features(displacement, fs: float) -> np.ndarray:
    """Max, median, mean, std and IQR of speed, acceleration and jerk magnitudes."""
    d = np.asarray(displacement, dtype=float)
    _check_length(len(d))
    out = []
    for deriv in (1, 2, 3):
        mag = np.linalg.norm(savgol(d, fs, deriv=deriv), axis=1)
        out += _stats(mag)
    return np.array(out)


def kinematic_features_extended(signal, fs: float) -> tuple[np.ndarray, bool]:
    """21 statistics of a 1D velocity-like signal and its two derivatives.

    The signal keeps its sign; derivatives enter as magnitudes, like the
    acceleration and jerk of the standard set. Returns the values and
    whether any skew/kurtosis was degenerate.
    """
    s = np.asarray(signal, dtype=float)
    _check_length(len(s))
    out, degenerate = [], False
    for deriv in (0, 1, 2):
        x = savgol(s, fs, deriv=deriv)
        if deriv:
            x = np.abs(x)
        shape, flat = _shape_stats(x)
        out += _stats(x) + shape
        degenerate |= flat
    return np.array(out), degenerate


def spectral_feature_block(spec: Spectrum) -> tuple[np.ndarray, bool]:
    """Peak, entropy, total power, half point and four relative power bands.

    Entropy (bits) and bands use the PSD normalized to unit sum. The half
    point treats each bin's power as spread evenly over the bin width.
    An all-zero spectrum yields zeros and ``degenerate=True``.
    """
    p = np.asarray(spec.power, dtype=float)
    total = spec.total_power
    if p.size == 0:
        raise ValueError("empty spectrum")
    if not np.any(p > 0):
        return np.zeros(len(SPECTRAL)), True
    prob = p / p.sum()
    nz = prob[prob > 0]
    entropy = float(-np.sum(nz * np.log2(nz)))

    cdf = np.cumsum(prob)
    upper = np.minimum(spec.freqs + spec.df / 2, spec.freqs[-1])
    lower = np.concatenate([[0.0], upper[:-1]])
    k = int(np.searchsorted(cdf, 0.5 - 1e-12))
    k = min(k, len(cdf) - 1)
    c0 = cdf[k - 1] if k else 0.0
    half = lower[k] + (0.5 - c0) / prob[k] * (upper[k] - lower[k]) if prob[k] > 0 else lower[k]

    f = spec.freqs
    bands = []
    for lo, hi, inclusive in BANDS:
        sel = (f >= lo) if inclusive else (f > lo)
        sel &= f <= hi
        bands.append(prob[sel].sum())
    return np.array([p.max(), entropy, total, half] + bands), False


def spectral_features(displacement, fs: float, welch: dict | None = None) -> tuple[np.ndarray, list[str]]:
    """Displacement and velocity PSD blocks (x + iy complex signals)."""
    d = np.asarray(displacement, dtype=float)
    welch = welch or {}
    vel = savgol(d, fs, deriv=1)
    out, flags = [], []
    for name, sig in (("disp", d), ("vel", vel)):
        block, degenerate = spectral_feature_block(welch_psd(sig[:, 0] + 1j * sig[:, 1], fs, **welch))
        out.append(block)
        if degenerate:
            flags.append(f"{name}_psd_degenerate")
    return np.concatenate(out), flags


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Monotone-chain convex hull, counter-clockwise, collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float))))
    if len(pts) <= 2:
        return np.array(pts).reshape(-1, 2)
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def convex_hull_area(points) -> float:
    hull = convex_hull(points)
    if len(hull) < 3:
        return 0.0
    x, y = hull[:, 0], hull[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def joint_features_standard(displacement, fs: float, welch: dict | None = None) -> FeatureVector:
    d = np.asarray(displacement, dtype=float)
    spectral, flags = spectral_features(d, fs, welch)
    values = np.concatenate([kinematic_features(d, fs), spectral, [convex_hull_area(d)]])
    for f in flags:
        log.debug("degenerate feature block: %s", f)
    return FeatureVector("standard-32", STANDARD_NAMES, values, tuple(flags))


def toe_tapping_features(velocity, fs: float, welch: dict | None = None) -> FeatureVector:
    """95 features of an aggregate 2D velocity signal (no displacement)."""
    v = np.asarray(velocity, dtype=float)
    _check_length(len(v))
    welch = welch or {}
    speed = np.linalg.norm(v, axis=1)
    values, flags = [], []
    for name, sig in (("speed", speed), ("vx", v[:, 0]), ("vy", v[:, 1])):
        block, degenerate = kinematic_features_extended(sig, fs)
        values.append(block)
        if degenerate:
            flags.append(f"{name}_shape_degenerate")
    spectra = (
        ("vel_psd", welch_psd(v[:, 0] + 1j * v[:, 1], fs, **welch)),
        ("vx_psd", welch_psd_real(v[:, 0], fs, **welch)),
        ("vy_psd", welch_psd_real(v[:, 1], fs, **welch)),
        ("speed_psd", welch_psd_real(speed, fs, **welch)),
    )
    for name, spec in spectra:
        block, degenerate = spectral_feature_block(spec)
        values.append(block)
        if degenerate:
            flags.append(f"{name}_degenerate")
    return FeatureVector("toetap-95", TOETAP_NAMES, np.concatenate(values), tuple(flags))


def communication_average(vectors) -> FeatureVector:
    """Element-wise mean of per-subtask vectors sharing one schema."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("no subtask vectors to average")
    first = vectors[0]
    for v in vectors[1:]:
        if v.names != first.names:
            raise ValueError("subtask feature schemas differ")
    values = np.mean([v.values for v in vectors], axis=0)
    flags = tuple(sorted({f for v in vectors for f in v.flags}))
    return FeatureVector(first.schema_id, first.names, values, flags)


def joint_vector(pieces, fs: float, welch: dict | None = None) -> FeatureVector:
    """Standard features of one joint, averaged over subtask pieces.

    Pieces shorter than the smoothing window are skipped.
    """
    usable = [p for p in pieces if len(p) >= SAVGOL_WINDOW]
    if not usable:
        raise ValueError("no trajectory piece long enough for feature extraction")
    return communication_average(joint_features_standard(p, fs, welch) for p in usable)


def routed_vector(task: Task, subscore: str, per_joint: dict[Joint, FeatureVector],
                  video_id: str = "") -> FeatureVector:
    """Concatenate the per-joint vectors routed to ``(task, subscore)``."""
    joints = ROUTING[Task(task)][subscore]
    missing = [j.value for j in joints if j not in per_joint]
    if missing:
        raise ValueError(f"video {video_id}: missing routed joint(s) {', '.join(missing)}")
    return concat(per_joint[j].prefixed(j.value) for j in joints)


def assemble_task_features(task: Task, subscore: str, trajectories, fs: float,
                           welch: dict | None = None, video_id: str = "") -> FeatureVector:
    """Feature vector for one subscore of one video.

    ``trajectories`` maps joints to lists of cleaned displacement pieces; for
    toe tapping it maps the side ("Right"/"Left") to the aggregate velocity.
    """
    task = Task(task)
    if task is Task.TOE_TAPPING:
        if subscore not in trajectories:
            raise ValueError(f"video {video_id}: no toe velocity for side {subscore}")
        return toe_tapping_features(trajectories[subscore], fs, welch).prefixed(subscore)
    per_joint = {j: joint_vector(trajectories[j], fs, welch)
                 for j in ROUTING[task][subscore] if j in trajectories}
    return routed_vector(task, subscore, per_joint, video_id)
