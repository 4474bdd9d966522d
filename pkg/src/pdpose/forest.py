"""Random forests (CART trees, bootstrap bagging) and randomized search.

Trees are grown by a compiled builder operating on flat node arrays, so a
200-iteration search inside every cross-validation fold stays cheap.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"
CRITERIA = {"gini": 0, "entropy": 1, "variance": 2}
_EPS = 1e-12


@dataclass(frozen=True)
class Hyperparameters:
    max_features: int
    min_samples_split: int
    min_samples_leaf: int
    n_trees: int
    criterion: str = "gini"

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if min(self.max_features, self.min_samples_split, self.min_samples_leaf,
               self.n_trees) < 1:
            raise ValueError(f"hyperparameters must be >= 1: {self}")


@dataclass(frozen=True)
class SearchSpace:
    """Inclusive integer ranges, plus the criteria to draw from."""

    max_features: tuple[int, int]
    min_samples_split: tuple[int, int] = (1, 11)
    min_samples_leaf: tuple[int, int] = (1, 11)
    n_trees: tuple[int, int] = (25, 50)
    criteria: tuple[str, ...] = ("gini", "entropy")

    @classmethod
    def for_task(cls, kind: str, n_features: int, total_updrs: bool = False) -> "SearchSpace":
        """Hyperparameter ranges for ``n_features`` columns.

        Classification tries up to floor(sqrt(m)) features per split,
        regression up to floor(m/3) (at least 1). Forests predicting the
        UPDRS Part III total get 64-128 trees instead of 25-50.
        """
        if kind == CLASSIFICATION:
            hi = math.isqrt(n_features)
            crit = ("gini", "entropy")
        elif kind == REGRESSION:
            hi = n_features // 3
            crit = ("variance",)
        else:
            raise ValueError(f"unknown task kind {kind!r}")
        trees = (64, 128) if total_updrs else (25, 50)
        return cls(max_features=(1, max(hi, 1)), n_trees=trees, criteria=crit)

    def sample(self, rng: np.random.Generator) -> Hyperparameters:
        def draw(lo_hi):
            return int(rng.integers(lo_hi[0], lo_hi[1] + 1))

        return Hyperparameters(
            max_features=draw(self.max_features),
            min_samples_split=draw(self.min_samples_split),
            min_samples_leaf=draw(self.min_samples_leaf),
            n_trees=draw(self.n_trees),
            criterion=self.criteria[int(rng.integers(len(self.criteria)))],
        )

    def contains(self, hp: Hyperparameters) -> bool:
        return (
            self.max_features[0] <= hp.max_features <= self.max_features[1]
            and self.min_samples_split[0] <= hp.min_samples_split <= self.min_samples_split[1]
            and self.min_samples_leaf[0] <= hp.min_samples_leaf <= self.min_samples_leaf[1]
            and self.n_trees[0] <= hp.n_trees <= self.n_trees[1]
            and hp.criterion in self.criteria
        )


@dataclass
class Tree:
    """Flat binary tree; leaves have ``feature == -1``.

    ``value`` rows are class distributions (classification) or a single
    mean target (regression).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _apply(self.feature, self.threshold, self.left, self.right,
                      np.ascontiguousarray(X, dtype=np.float64))

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@numba.njit(cache=True)
def _class_impurity(counts, n, crit):
    s = 0.0
    if crit == 0:
        for c in counts:
            p = c / n
            s += p * p
        return 1.0 - s
    for c in counts:
        if c > 0:
            p = c / n
            s -= p * np.log2(p)
    return s


@numba.njit(cache=True)
def _build(X, y_code, y_value, n_classes, crit, max_features, min_split, min_leaf, seed):
    np.random.seed(seed)
    n, m = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    n_out = n_classes if crit < 2 else 1
    value = np.zeros((cap, n_out))

    idx = np.arange(n)
    buf = np.empty(n, np.int64)
    vals = np.empty(n)
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    sp = 0
    st_node[0], st_start[0], st_end[0] = 0, 0, n
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node, s, e = st_node[sp], st_start[sp], st_end[sp]
        cnt = e - s
        counts = np.zeros(n_classes)
        tot = 0.0
        totsq = 0.0
        if crit < 2:
            for i in range(s, e):
                counts[y_code[idx[i]]] += 1.0
            for c in range(n_classes):
                value[node, c] = counts[c] / cnt
            imp = _class_impurity(counts, cnt, crit)
        else:
            for i in range(s, e):
                v = y_value[idx[i]]
                tot += v
                totsq += v * v
            value[node, 0] = tot / cnt
            imp = max(totsq / cnt - (tot / cnt) ** 2, 0.0)
        if cnt < min_split or cnt < 2 * min_leaf or imp <= _EPS:
            continue

        feats = np.sort(np.random.permutation(m)[:max_features])
        best_gain = 0.0
        best_f = -1
        best_t = 0.0
        for f in feats:
            for i in range(cnt):
                vals[i] = X[idx[s + i], f]
            order = np.argsort(vals[:cnt], kind="mergesort")
            if vals[order[0]] == vals[order[cnt - 1]]:
                continue
            lc = np.zeros(n_classes)
            rc = counts.copy()
            lsum = 0.0
            lsq = 0.0
            for i in range(cnt - 1):
                r = idx[s + order[i]]
                if crit < 2:
                    lc[y_code[r]] += 1.0
                    rc[y_code[r]] -= 1.0
                else:
                    lsum += y_value[r]
                    lsq += y_value[r] * y_value[r]
                nl = i + 1
                nr = cnt - nl
                a = vals[order[i]]
                b = vals[order[i + 1]]
                if a == b or nl < min_leaf or nr < min_leaf:
                    continue
                if crit < 2:
                    child = (nl * _class_impurity(lc, nl, crit)
                             + nr * _class_impurity(rc, nr, crit)) / cnt
                else:
                    rsum = tot - lsum
                    rsq = totsq - lsq
                    child = (lsq - lsum * lsum / nl + rsq - rsum * rsum / nr) / cnt
                gain = imp - child
                # ties keep the earlier (lower feature index, lower threshold)
                if gain > best_gain + _EPS:
                    best_gain = gain
                    best_f = f
                    t = 0.5 * (a + b)
                    best_t = t if t < b else a
        if best_f < 0:
            continue

        nl = 0
        nr = 0
        for i in range(s, e):
            r = idx[i]
            if X[r, best_f] <= best_t:
                idx[s + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for i in range(nr):
            idx[s + nl + i] = buf[i]
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[sp], st_start[sp], st_end[sp] = n_nodes + 1, s + nl, e
        sp += 1
        st_node[sp], st_start[sp], st_end[sp] = n_nodes, s, s + nl
        sp += 1
        n_nodes += 2

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes])


@numba.njit(cache=True)
def _apply(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


def _check_xy(X, y=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("X must be a non-empty 2D array")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value")
    if y is not None:
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError("X and y lengths differ")
        if y.dtype.kind == "f" and not np.all(np.isfinite(y)):
            raise ValueError("non-finite target value")
    return X, y


def _encode(y, kind, classes):
    if kind == REGRESSION:
        return np.zeros(len(y), np.int64), np.asarray(y, dtype=np.float64), 1, None
    classes = tuple(sorted(set(np.asarray(y).tolist()))) if classes is None else tuple(classes)
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        codes = np.array([lookup[v] for v in np.asarray(y).tolist()], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} not among classes {classes}") from None
    return codes, np.zeros(len(y)), len(classes), classes


def fit_tree(X, y, hp: Hyperparameters, rng: np.random.Generator, kind: str = CLASSIFICATION,
             classes=None) -> Tree:
    """Grow one CART tree on all rows of ``X`` (no bootstrap)."""
    X, y = _check_xy(X, y)
    codes, values, n_classes, _ = _encode(y, kind, classes)
    return _grow(X, codes, values, n_classes, kind, hp, int(rng.integers(2 ** 31)))


def _grow(X, codes, values, n_classes, kind, hp, seed):
    crit = CRITERIA[hp.criterion if kind == CLASSIFICATION else "variance"]
    if kind == CLASSIFICATION and crit == 2:
        raise ValueError("variance criterion is for regression")
    mf = min(hp.max_features, X.shape[1])
    # a single-sample node cannot split
    min_split = max(hp.min_samples_split, 2)
    return Tree(*_build(X, codes, values, n_classes, crit, mf, min_split,
                        hp.min_samples_leaf, seed))


@dataclass
class ForestModel:
    kind: str
    hyperparameters: Hyperparameters
    trees: list[Tree]
    n_features: int
    seed: int
    classes: tuple | None = None
    feature_names: tuple[str, ...] | None = None
    oob_indices: list[np.ndarray] = field(default_factory=list, repr=False)
    oob_score: float = float("nan")

    def _check(self, X):
        X, _ = _check_xy(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_proba(self, X) -> np.ndarray:
        if self.kind != CLASSIFICATION:
            raise ValueError("predict_proba needs a classification forest")
        X = self._check(X)
        return np.mean([t.predict_value(X) for t in self.trees], axis=0)

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        if self.kind == REGRESSION:
            return np.mean([t.predict_value(X)[:, 0] for t in self.trees], axis=0)
        votes = np.zeros((len(X), len(self.classes)))
        rows = np.arange(len(X))
        for t in self.trees:
            votes[rows, np.argmax(t.predict_value(X), axis=1)] += 1
        return np.asarray(self.classes)[np.argmax(votes, axis=1)]

    def to_dict(self) -> dict:
        return {
            "format": "pdpose-forest/1",
            "kind": self.kind,
            "hyperparameters": asdict(self.hyperparameters),
            "n_features": self.n_features,
            "seed": self.seed,
            "classes": list(self.classes) if self.classes is not None else None,
            "feature_names": list(self.feature_names) if self.feature_names else None,
            "oob_score": self.oob_score,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("format") != "pdpose-forest/1":
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        trees = [
            Tree(
                np.array(t["feature"], dtype=np.int64),
                np.array(t["threshold"], dtype=np.float64),
                np.array(t["left"], dtype=np.int64),
                np.array(t["right"], dtype=np.int64),
                np.array(t["value"], dtype=np.float64).reshape(len(t["feature"]), -1),
            )
            for t in d["trees"]
        ]
        classes = d.get("classes")
        return cls(
            kind=d["kind"],
            hyperparameters=Hyperparameters(**d["hyperparameters"]),
            trees=trees,
            n_features=d["n_features"],
            seed=d["seed"],
            classes=tuple(classes) if classes is not None else None,
            feature_names=tuple(d["feature_names"]) if d.get("feature_names") else None,
            oob_score=d.get("oob_score", float("nan")),
        )


def fit_forest(X, y, hp: Hyperparameters, seed: int, kind: str = CLASSIFICATION,
               classes=None, feature_names=None) -> ForestModel:
    """Bagged CART trees; each tree sees a size-n bootstrap sample.

    ``classes`` fixes the label set (and probability columns) even when the
    training labels miss some classes.
    """
    X, y = _check_xy(X, y)
    codes, values, n_classes, classes = _encode(y, kind, classes)
    rng = np.random.default_rng(seed)
    n = len(X)
    trees, oob = [], []
    for _ in range(hp.n_trees):
        boot = rng.integers(0, n, n)
        tree_seed = int(rng.integers(2 ** 31))
        trees.append(_grow(X[boot], codes[boot], values[boot], n_classes, kind, hp, tree_seed))
        mask = np.ones(n, bool)
        mask[boot] = False
        oob.append(np.flatnonzero(mask))
    model = ForestModel(kind, hp, trees, X.shape[1], int(seed), classes,
                        tuple(feature_names) if feature_names is not None else None, oob)
    model.oob_score = _oob_score(model, X, codes, values)
    return model


def _oob_score(model: ForestModel, X, codes, values) -> float:
    """OOB accuracy (classification) or negative OOB RMS (regression)."""
    n = len(X)
    width = len(model.classes) if model.kind == CLASSIFICATION else 1
    acc = np.zeros((n, width))
    hits = np.zeros(n)
    for tree, rows in zip(model.trees, model.oob_indices):
        if len(rows):
            acc[rows] += tree.predict_value(X[rows])
            hits[rows] += 1
    seen = hits > 0
    if not seen.any():
        return float("-inf")
    if model.kind == CLASSIFICATION:
        pred = np.argmax(acc[seen], axis=1)
        return float(np.mean(pred == codes[seen]))
    pred = acc[seen, 0] / hits[seen]
    return -float(np.sqrt(np.mean((pred - values[seen]) ** 2)))


def oob_predictions(model: ForestModel, X) -> np.ndarray:
    """Per-row OOB mean prediction (NaN where a row was never out of bag)."""
    X = model._check(X)
    width = len(model.classes) if model.kind == CLASSIFICATION else 1
    acc = np.zeros((len(X), width))
    hits = np.zeros(len(X))
    for tree, rows in zip(model.trees, model.oob_indices):
        if len(rows):
            acc[rows] += tree.predict_value(X[rows])
            hits[rows] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        out = acc / hits[:, None]
    return out[:, 0] if model.kind == REGRESSION else out


@dataclass
class SearchResult:
    best: Hyperparameters
    model: ForestModel
    trials: list[tuple[Hyperparameters, float]]


def randomized_search(X, y, space: SearchSpace, iters: int = 200, seed: int = 0,
                      kind: str = CLASSIFICATION, classes=None,
                      feature_names=None) -> SearchResult:
    """Draw ``iters`` hyperparameter sets uniformly, keep the best OOB score.

    Ties go to the first set drawn. Only the training data is touched.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    sampler_ss, forest_ss = np.random.SeedSequence(seed).spawn(2)
    sampler = np.random.default_rng(sampler_ss)
    forest_seeds = forest_ss.generate_state(iters)
    best_model, trials = None, []
    for i in range(iters):
        hp = space.sample(sampler)
        model = fit_forest(X, y, hp, int(forest_seeds[i]), kind, classes, feature_names)
        trials.append((hp, model.oob_score))
        if best_model is None or model.oob_score > best_model.oob_score:
            best_model = model
    return SearchResult(best_model.hyperparameters, best_model, trials)
