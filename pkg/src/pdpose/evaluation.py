"""Leave-one-subject-out experiments and their metrics."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_BINARIZATION, RunConfig
from .core import UDYSRS_LABELS, Dataset, Task, subscore_labels
from .features import concat
from .forest import CLASSIFICATION, REGRESSION, ForestModel, SearchSpace, randomized_search
from .pipeline import FeatureExtractor, FeatureTable

log = logging.getLogger(__name__)

NEGATIVE, POSITIVE = 0, 1
MULTICLASS = ("LID", "Normal", "PD")
TOTAL_TASKS = {
    "UDysRS": (Task.COMMUNICATION, Task.DRINKING),
    "UPDRS3": (Task.COMMUNICATION, Task.LEG_AGILITY, Task.TOE_TAPPING),
}


# -- labels -----------------------------------------------------------------

def binarize(task: Task, mean_score: float, rules: dict | None = None) -> int:
    """1 for pathological motion, 0 for normal."""
    rule = (rules or DEFAULT_BINARIZATION)[Task(task).value]
    t = rule["threshold"]
    negative = mean_score <= t if rule["inclusive"] else mean_score < t
    return NEGATIVE if negative else POSITIVE


def multiclass_label(pd_score: float, lid_score: float) -> str:
    if pd_score <= 1 and lid_score <= 1:
        return "Normal"
    if pd_score == lid_score:
        return "Omit"
    return "PD" if pd_score > lid_score else "LID"


# -- metrics ----------------------------------------------------------------

def rms(pred, truth) -> float:
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def pearson(pred, truth) -> float | None:
    """Pearson correlation; None when either side is constant."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if len(pred) != len(truth) or len(pred) < 2:
        raise ValueError("pearson needs two equal-length samples of size >= 2")
    dp, dt = pred - pred.mean(), truth - truth.mean()
    denom = math.sqrt(float(np.dot(dp, dp)) * float(np.dot(dt, dt)))
    if denom == 0:
        return None
    return float(np.clip(np.dot(dp, dt) / denom, -1.0, 1.0))


def f1(pred_labels, truth_labels, positive=POSITIVE) -> float | None:
    pred = np.asarray(pred_labels) == positive
    truth = np.asarray(truth_labels) == positive
    tp = np.sum(pred & truth)
    denom = 2 * tp + np.sum(pred & ~truth) + np.sum(~pred & truth)
    return None if denom == 0 else float(2 * tp / denom)


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def roc_auc(scores, truth_labels, positive=POSITIVE) -> float | None:
    """Area under the ROC curve (Mann-Whitney form, ties count one half)."""
    scores = np.asarray(scores, float)
    pos = np.asarray(truth_labels) == positive
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        return None
    r = _midranks(scores)
    return float((r[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def fisher_mean(rs) -> float:
    """Mean correlation through Fisher's z-transform."""
    rs = np.asarray(list(rs), float)
    if rs.size == 0:
        raise ValueError("no correlations to average")
    if np.any(np.abs(rs) >= 1):
        raise ValueError("|r| = 1 has an infinite Fisher z")
    return float(np.tanh(np.mean(np.arctanh(rs))))


@dataclass
class Metrics:
    n: int
    n0: int | None = None
    rms: float | None = None
    r: float | None = None
    f1: float | None = None
    auc: float | None = None
    accuracy: float | None = None
    per_class: dict = field(default_factory=dict)


def regression_metrics(pred, truth) -> Metrics:
    return Metrics(n=len(truth), rms=rms(pred, truth),
                   r=pearson(pred, truth) if len(truth) >= 2 else None)


def binary_metrics(pred, scores, truth) -> Metrics:
    truth = np.asarray(truth)
    return Metrics(n=len(truth), n0=int(np.sum(truth == NEGATIVE)), f1=f1(pred, truth),
                   auc=roc_auc(scores, truth),
                   accuracy=float(np.mean(np.asarray(pred) == truth)) if len(truth) else None)


def multiclass_metrics(pred, truth, classes=MULTICLASS) -> Metrics:
    pred, truth = np.asarray(pred), np.asarray(truth)
    per_class = {}
    for c in classes:
        tp = np.sum((pred == c) & (truth == c))
        fn = np.sum((pred != c) & (truth == c))
        tn = np.sum((pred != c) & (truth != c))
        fp = np.sum((pred == c) & (truth != c))
        per_class[c] = {
            "n": int(tp + fn),
            "sensitivity": float(tp / (tp + fn)) if tp + fn else None,
            "specificity": float(tn / (tn + fp)) if tn + fp else None,
        }
    return Metrics(n=len(truth), accuracy=float(np.mean(pred == truth)) if len(truth) else None,
                   per_class=per_class)


# -- cross-validation ---------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    subject: str
    train: tuple[str, ...]
    test: tuple[str, ...]


def loso_folds(d: Dataset, videos=None) -> list[Fold]:
    """One fold per subject; ``videos`` restricts to videos bearing the needed rating."""
    keep = set(videos) if videos is not None else None
    by_subject: dict[str, list[str]] = {}
    for seq in d.sequences:
        by_subject.setdefault(seq.subject_id, [])
        if keep is None or seq.video_id in keep:
            by_subject[seq.subject_id].append(seq.video_id)
    for s, vids in by_subject.items():
        if not vids:
            log.warning("subject %s has no usable videos; excluded", s)
    subjects = sorted(s for s, v in by_subject.items() if v)
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    return [
        Fold(s, tuple(v for o in subjects if o != s for v in by_subject[o]), tuple(by_subject[s]))
        for s in subjects
    ]


def derive_seed(master: int, *keys) -> int:
    blob = "|".join([str(master)] + [str(k) for k in keys]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little") >> 1


@dataclass
class LosoOutput:
    predictions: np.ndarray
    scores: np.ndarray | None
    covered: np.ndarray


def loso_predict(X, y, groups, kind: str, space_for, iters: int, seed: int, key: str,
                 classes=None, names=None) -> LosoOutput:
    """Pooled held-out predictions, one randomized search per training fold."""
    X = np.asarray(X, float)
    y = np.asarray(y)
    groups = np.asarray(groups)
    subjects = sorted(set(groups.tolist()))
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    preds = np.empty(len(y), dtype=object if kind == CLASSIFICATION else float)
    scores = np.full(len(y), np.nan) if classes is not None and len(classes) == 2 else None
    covered = np.zeros(len(y), bool)
    for s in subjects:
        test = groups == s
        train = ~test
        if train.sum() < 2:
            log.warning("%s: fold %s has fewer than 2 training rows; skipped", key, s)
            continue
        model = fit_on_rows(X[train], y[train], kind, space_for(X.shape[1]), iters,
                            derive_seed(seed, key, s), classes, names)
        if kind == CLASSIFICATION and len(set(y[train].tolist())) < len(classes):
            log.info("%s: fold %s lacks some classes in training", key, s)
        preds[test] = model.predict(X[test])
        if scores is not None:
            scores[test] = model.predict_proba(X[test])[:, list(classes).index(POSITIVE)]
        covered[test] = True
    return LosoOutput(preds, scores, covered)


def fit_on_rows(X, y, kind, space: SearchSpace, iters, seed, classes=None, names=None) -> ForestModel:
    return randomized_search(X, y, space, iters, seed, kind, classes, names).model


def _space_fn(kind: str, total_updrs: bool = False):
    return lambda m: SearchSpace.for_task(kind, m, total_updrs)


def _scalar(v):
    return v.item() if isinstance(v, np.generic) else v


# -- experiments -------------------------------------------------------------

@dataclass
class ExperimentResult:
    experiment: str
    task: str
    subscore: str
    metrics: Metrics
    predictions: list[dict] = field(default_factory=list)

    @property
    def key(self) -> str:
        return f"{self.experiment}:{self.task}:{self.subscore}"


def _subscore_data(dataset, task, subscore, mode, config, extractor):
    table = extractor.subscore_table(dataset, task, subscore)
    rows, target = [], []
    for i, vid in enumerate(table.video_ids):
        m = dataset.rating(vid).mean(task, subscore)
        if m is None:
            continue
        rows.append(i)
        target.append(m)
    table = table.take(rows)
    target = np.array(target, float)
    if mode == "binary":
        labels = np.array([binarize(task, t, config.binarization) for t in target])
        return table, labels, target
    return table, target, target


def run_subscore_experiment(dataset: Dataset, task: Task, subscore: str, mode: str,
                            config: RunConfig | None = None,
                            extractor: FeatureExtractor | None = None) -> ExperimentResult:
    """LOSO regression or binary detection for one (task, subscore)."""
    config = config or RunConfig()
    extractor = extractor or FeatureExtractor(config)
    task = Task(task)
    if mode not in ("regression", "binary"):
        raise ValueError(f"unknown mode {mode!r}")
    table, y, means = _subscore_data(dataset, task, subscore, mode, config, extractor)
    key = f"{mode}:{task.value}:{subscore}"
    if len(set(table.subject_ids)) < 2:
        raise ValueError(f"{key}: fewer than 2 subjects with rated videos")
    kind = CLASSIFICATION if mode == "binary" else REGRESSION
    classes = (NEGATIVE, POSITIVE) if mode == "binary" else None
    out = loso_predict(table.X, y, table.subject_ids, kind, _space_fn(kind),
                       config.search_iters, config.seed, key, classes, table.names)
    c = out.covered
    rows = []
    for i in np.flatnonzero(c):
        row = {"video_id": table.video_ids[i], "subject_id": table.subject_ids[i],
               "rating": float(means[i]), "truth": _scalar(y[i]), "prediction": _scalar(out.predictions[i])}
        if out.scores is not None:
            row["score"] = float(out.scores[i])
        rows.append(row)
    if mode == "regression":
        metrics = regression_metrics(out.predictions[c].astype(float), y[c])
    else:
        metrics = binary_metrics(out.predictions[c].astype(int), out.scores[c], y[c])
    return ExperimentResult(mode, task.value, subscore, metrics, rows)


def train_subscore_model(dataset: Dataset, task: Task, subscore: str, mode: str,
                         config: RunConfig | None = None,
                         extractor: FeatureExtractor | None = None,
                         exclude_subject: str | None = None) -> ForestModel:
    """Search and fit on every rated video, optionally leaving one subject out.

    Leaving subject ``s`` out reproduces exactly the model of the LOSO fold
    that held ``s`` out.
    """
    config = config or RunConfig()
    extractor = extractor or FeatureExtractor(config)
    task = Task(task)
    table, y, _ = _subscore_data(dataset, task, subscore, mode, config, extractor)
    keep = np.array([s != exclude_subject for s in table.subject_ids])
    if not keep.any():
        raise ValueError("no training rows")
    kind = CLASSIFICATION if mode == "binary" else REGRESSION
    classes = (NEGATIVE, POSITIVE) if mode == "binary" else None
    key = f"{mode}:{task.value}:{subscore}"
    fold = exclude_subject if exclude_subject is not None else "*all*"
    return fit_on_rows(table.X[keep], y[keep], kind,
                       _space_fn(kind)(table.X.shape[1]), config.search_iters,
                       derive_seed(config.seed, key, fold), classes, table.names)


def lid_severity(record, task: Task = Task.COMMUNICATION) -> float | None:
    vals = [record.mean(task, lab) for lab in UDYSRS_LABELS]
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def run_multiclass_experiment(dataset: Dataset, config: RunConfig | None = None,
                              extractor: FeatureExtractor | None = None) -> ExperimentResult:
    """Normal / PD / LID classification of communication videos."""
    config = config or RunConfig()
    extractor = extractor or FeatureExtractor(config)
    table = extractor.task_table(dataset, Task.COMMUNICATION)
    rows, labels = [], []
    omitted = 0
    for i, vid in enumerate(table.video_ids):
        rec = dataset.rating(vid)
        lid = lid_severity(rec)
        if rec.global_spontaneity is None or lid is None:
            continue
        lab = multiclass_label(rec.global_spontaneity, lid)
        if lab == "Omit":
            omitted += 1
            continue
        rows.append(i)
        labels.append(lab)
    if omitted:
        log.info("multiclass: %d videos omitted for equal PD/LID severity", omitted)
    table = table.take(rows)
    y = np.array(labels, dtype=object)
    key = "multiclass:Communication:all"
    out = loso_predict(table.X, y, table.subject_ids, CLASSIFICATION,
                       _space_fn(CLASSIFICATION), config.search_iters, config.seed, key,
                       MULTICLASS, table.names)
    c = out.covered
    preds = [{"video_id": table.video_ids[i], "subject_id": table.subject_ids[i],
              "truth": str(y[i]), "prediction": str(out.predictions[i])}
             for i in np.flatnonzero(c)]
    return ExperimentResult("multiclass", Task.COMMUNICATION.value, "all",
                            multiclass_metrics(out.predictions[c], y[c]), preds)


def session_table(dataset: Dataset, scale: str, extractor: FeatureExtractor):
    """Concatenated task features per assessment session, with total targets."""
    tasks = TOTAL_TASKS[scale]
    sessions: dict[tuple[str, str], dict[Task, object]] = {}
    for seq in sorted(dataset.sequences, key=lambda s: s.video_id):
        if seq.task in tasks:
            slot = sessions.setdefault((seq.subject_id, seq.session), {})
            if seq.task in slot:
                log.warning("session %s has several %s videos; using %s",
                            seq.session, seq.task.value, slot[seq.task].video_id)
                continue
            slot[seq.task] = seq
    attr = "udysrs_total" if scale == "UDysRS" else "updrs3_total"
    ids, subjects, vectors, targets = [], [], [], []
    for (subject, session), slot in sorted(sessions.items()):
        missing = [t.value for t in tasks if t not in slot]
        if missing:
            log.info("%s total: session %s lacks %s; excluded", scale, session, ", ".join(missing))
            continue
        target = next((getattr(dataset.rating(s.video_id), attr) for s in slot.values()
                       if getattr(dataset.rating(s.video_id), attr) is not None), None)
        if target is None:
            continue
        parts = [extractor._safe(extractor.task_vector, slot[t]) for t in tasks]
        if any(p is None for p in parts):
            log.info("%s total: session %s has failed videos; excluded", scale, session)
            continue
        vec = concat(p.prefixed(t.value) for p, t in zip(parts, tasks))
        ids.append(session)
        subjects.append(subject)
        vectors.append(vec)
        targets.append(float(target))
    names = vectors[0].names if vectors else ()
    X = np.array([v.values for v in vectors]).reshape(len(vectors), len(names))
    return FeatureTable(ids, subjects, names, X), np.array(targets)


def run_total_score_experiment(dataset: Dataset, scale: str, config: RunConfig | None = None,
                               extractor: FeatureExtractor | None = None) -> ExperimentResult:
    """Regression of the UDysRS or UPDRS Part III total from combined task features."""
    if scale not in TOTAL_TASKS:
        raise ValueError(f"unknown scale {scale!r}")
    config = config or RunConfig()
    extractor = extractor or FeatureExtractor(config)
    table, y = session_table(dataset, scale, extractor)
    key = f"total:{scale}"
    if len(set(table.subject_ids)) < 2:
        raise ValueError(f"{key}: fewer than 2 subjects with complete sessions")
    out = loso_predict(table.X, y, table.subject_ids, REGRESSION,
                       _space_fn(REGRESSION, total_updrs=scale == "UPDRS3"),
                       config.search_iters, config.seed, key, None, table.names)
    c = out.covered
    preds = [{"video_id": table.video_ids[i], "subject_id": table.subject_ids[i],
              "truth": float(y[i]), "prediction": float(out.predictions[i])}
             for i in np.flatnonzero(c)]
    return ExperimentResult("total", scale, "total",
                            regression_metrics(out.predictions[c].astype(float), y[c]), preds)


@dataclass
class EvaluationReport:
    results: list[ExperimentResult]
    fingerprint: str
    config: dict
    errors: dict = field(default_factory=dict)

    def find(self, experiment: str, task: str) -> list[ExperimentResult]:
        return [r for r in self.results if r.experiment == experiment and r.task == task]

    def task_mean(self, experiment: str, task: str) -> Metrics:
        """Mean row: Fisher-z mean for r, arithmetic for the rest."""
        res = self.find(experiment, task)

        def avg(attr):
            vals = [getattr(r.metrics, attr) for r in res if getattr(r.metrics, attr) is not None]
            return float(np.mean(vals)) if vals else None

        rs = [r.metrics.r for r in res if r.metrics.r is not None]
        try:
            r_mean = fisher_mean(rs) if rs else None
        except ValueError:
            r_mean = None
        return Metrics(n=max((r.metrics.n for r in res), default=0), rms=avg("rms"),
                       r=r_mean, f1=avg("f1"), auc=avg("auc"))


def evaluate(dataset: Dataset, config: RunConfig | None = None,
             extractor: FeatureExtractor | None = None) -> EvaluationReport:
    """Run every configured experiment; failures are recorded, not raised."""
    config = config or RunConfig()
    extractor = extractor or FeatureExtractor(config)
    results, errors = [], {}

    def attempt(key, fn, *args):
        try:
            results.append(fn(*args))
        except ValueError as exc:
            log.warning("%s failed: %s", key, exc)
            errors[key] = str(exc)

    present = {seq.task for seq in dataset.sequences}
    tasks = [t for t in config.task_list if t in present]
    skipped = [t.value for t in config.task_list if t not in present]
    if skipped:
        log.info("no videos for %s; their experiments are skipped", ", ".join(skipped))
    for task in tasks:
        for mode in ("regression", "binary"):
            if mode not in config.experiments:
                continue
            for sub in subscore_labels(task):
                attempt(f"{mode}:{task.value}:{sub}", run_subscore_experiment,
                        dataset, task, sub, mode, config, extractor)
    if "multiclass" in config.experiments and Task.COMMUNICATION in tasks:
        attempt("multiclass", run_multiclass_experiment, dataset, config, extractor)
    if "total" in config.experiments:
        for scale, needed in TOTAL_TASKS.items():
            if all(t in tasks for t in needed):
                attempt(f"total:{scale}", run_total_score_experiment,
                        dataset, scale, config, extractor)
    return EvaluationReport(results, config.fingerprint(), config.to_dict(), errors)
