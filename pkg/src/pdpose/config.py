"""Run configuration and its fingerprint."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .core import Task

DEFAULT_BINARIZATION = {
    # negative iff mean <= threshold (inclusive) or mean < threshold
    Task.COMMUNICATION.value: {"threshold": 0.5, "inclusive": True},
    Task.DRINKING.value: {"threshold": 0.5, "inclusive": True},
    Task.LEG_AGILITY.value: {"threshold": 1.0, "inclusive": True},
    Task.TOE_TAPPING.value: {"threshold": 2.0, "inclusive": False},
}

EXPERIMENTS = ("regression", "binary", "multiclass", "total")


@dataclass(frozen=True)
class WelchParams:
    nperseg: int = 256
    overlap: float = 0.5
    window: str = "hann"

    def kwargs(self) -> dict:
        return {"nperseg": self.nperseg, "overlap": self.overlap, "window": self.window}


@dataclass(frozen=True)
class RunConfig:
    trajectories: tuple[str, ...] = ()
    ratings: tuple[str, ...] = ()
    out: str = "out"
    seed: int = 0
    search_iters: int = 200
    tasks: tuple[str, ...] = tuple(t.value for t in Task)
    experiments: tuple[str, ...] = EXPERIMENTS
    welch: WelchParams = field(default_factory=WelchParams)
    binarization: dict = field(default_factory=lambda: dict(DEFAULT_BINARIZATION))
    flow_nonzero: float = 5.0e-4
    discontinuity_fraction: float = 0.5
    butterworth_cutoff_hz: float = 5.0
    butterworth_order: int = 5
    figures: bool = True

    def __post_init__(self):
        if self.search_iters < 1:
            raise ValueError("search_iters must be >= 1")
        for name in ("flow_nonzero", "discontinuity_fraction", "butterworth_cutoff_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for task, rule in self.binarization.items():
            Task(task)
            if rule["threshold"] <= 0:
                raise ValueError(f"binarization threshold for {task} must be > 0")
        for t in self.tasks:
            Task(t)
        for e in self.experiments:
            if e not in EXPERIMENTS:
                raise ValueError(f"unknown experiment {e!r}")

    @property
    def task_list(self) -> list[Task]:
        return [Task(t) for t in self.tasks]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["trajectories"] = list(self.trajectories)
        d["ratings"] = list(self.ratings)
        d["tasks"] = list(self.tasks)
        d["experiments"] = list(self.experiments)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "welch" in d:
            d["welch"] = WelchParams(**d["welch"])
        if "binarization" in d:
            d["binarization"] = {**DEFAULT_BINARIZATION, **d["binarization"]}
        for key in ("trajectories", "ratings", "tasks", "experiments"):
            if key in d:
                v = d[key]
                d[key] = (v,) if isinstance(v, str) else tuple(v)
        return cls(**d)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def fingerprint(self) -> str:
        """Short hash of every setting that can change results."""
        d = self.to_dict()
        for k in ("trajectories", "ratings", "out", "figures"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    data = data or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    base = path.parent
    for key in ("trajectories", "ratings"):
        if key in data:
            v = data[key]
            v = [v] if isinstance(v, str) else v
            data[key] = [str((base / p)) if not Path(p).is_absolute() else p for p in v]
    return RunConfig.from_dict(data)
