import dataclasses
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdpose import evaluation
from pdpose.config import RunConfig
from pdpose.core import Dataset, Task
from pdpose.evaluation import (
    MULTICLASS,
    binarize,
    derive_seed,
    evaluate,
    f1,
    fisher_mean,
    loso_folds,
    loso_predict,
    multiclass_label,
    multiclass_metrics,
    pearson,
    regression_metrics,
    rms,
    roc_auc,
    run_subscore_experiment,
    run_total_score_experiment,
    train_subscore_model,
)
from pdpose.forest import CLASSIFICATION, REGRESSION, SearchSpace
from pdpose.pipeline import FeatureExtractor
from tests.conftest import rated, static_sequence

FAST = RunConfig(search_iters=4, seed=11)


@pytest.fixture(scope="module")
def extractor():
    return FeatureExtractor(FAST)


# -- labels --------------------------------------------------------------------------

@pytest.mark.parametrize("task, score, label", [
    (Task.COMMUNICATION, 0.5, 0),
    (Task.COMMUNICATION, 0.51, 1),
    (Task.DRINKING, 0.5, 0),
    (Task.TOE_TAPPING, 1.5, 0),
    (Task.TOE_TAPPING, 2.0, 1),
    (Task.LEG_AGILITY, 1.0, 0),
    (Task.LEG_AGILITY, 1.34, 1),
])
def test_binarize(task, score, label):
    assert binarize(task, score) == label


def test_binarize_rule_is_configurable():
    rules = dict(RunConfig().binarization)
    rules[Task.LEG_AGILITY.value] = {"threshold": 1.0, "inclusive": False}
    assert binarize(Task.LEG_AGILITY, 1.0, rules) == 1


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(list(Task)), st.floats(0, 4), st.floats(0, 4))
def test_binarize_is_monotone(task, a, b):
    lo, hi = sorted((a, b))
    assert binarize(task, lo) <= binarize(task, hi)


@pytest.mark.parametrize("pd, lid, label", [
    (0.8, 0.5, "Normal"),
    (1.0, 1.0, "Normal"),
    (2.0, 1.2, "PD"),
    (0.5, 1.5, "LID"),
    (1.5, 1.5, "Omit"),
])
def test_multiclass_label(pd, lid, label):
    assert multiclass_label(pd, lid) == label


# -- metrics -----------------------------------------------------------------------------

def test_identity_prediction():
    t = np.array([0.0, 1.5, 3.0, 2.0])
    assert pearson(t, t) == pytest.approx(1.0)
    assert rms(t, t) == 0.0


def test_negated_prediction():
    t = np.array([-1.0, 0.0, 2.0, -1.0])
    assert pearson(-t, t) == pytest.approx(-1.0)


def test_hand_computed_pair():
    pred, truth = [0, 1, 2], [0, 2, 4]
    assert pearson(pred, truth) == pytest.approx(1.0)
    assert rms(pred, truth) == pytest.approx(np.sqrt(5 / 3))


def test_constant_truth_has_no_correlation():
    assert pearson([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]) is None


def test_auc_pair_counting():
    assert roc_auc([0.9, 0.8, 0.3], [1, 0, 1]) == 0.5


def test_auc_perfect_and_single_class():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.1, 0.2], [1, 1]) is None
    assert f1([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0


def _pair_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_matches_pair_counting(pairs):
    scores = [s / 5 for s, _ in pairs]
    labels = [l for _, l in pairs]
    if len(set(labels)) < 2:
        assert roc_auc(scores, labels) is None
    else:
        assert roc_auc(scores, labels) == pytest.approx(_pair_auc(scores, labels))


def test_auc_of_noise_is_half():
    rng = np.random.default_rng(0)
    labels = np.r_[np.zeros(500, int), np.ones(500, int)]
    assert abs(roc_auc(rng.random(1000), labels) - 0.5) <= 0.05


def test_f1_values():
    # tp 1, fp 1, fn 1
    assert f1([1, 1, 0, 0], [1, 0, 1, 0]) == pytest.approx(0.5)
    assert f1([0, 0], [0, 0]) is None


def test_fisher_mean_examples():
    assert fisher_mean([0.5, 0.5]) == pytest.approx(0.5)
    assert fisher_mean([0.712, 0.760, 0.645, 0.760, 0.522, 0.490]) == pytest.approx(0.661, abs=1e-3)
    assert fisher_mean([0.504, 0.710]) == pytest.approx(0.618, abs=1e-3)


def test_fisher_mean_rejects_unit_r():
    with pytest.raises(ValueError):
        fisher_mean([1.0, 0.2])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.99, 0.99), min_size=1, max_size=6), st.floats(0.001, 0.5))
def test_fisher_mean_is_monotone(rs, bump):
    raised = list(rs)
    raised[0] = min(raised[0] + bump, 0.995)
    if raised[0] > rs[0]:
        assert fisher_mean(raised) > fisher_mean(rs)


def test_multiclass_metrics():
    m = multiclass_metrics(np.array(["PD", "PD", "LID", "Normal"]),
                           np.array(["PD", "LID", "LID", "Normal"]))
    assert m.accuracy == 0.75
    assert m.per_class["LID"] == {"n": 2, "sensitivity": 0.5, "specificity": 1.0}
    assert m.per_class["PD"]["specificity"] == pytest.approx(2 / 3)


def test_all_normal_labels():
    y = np.array(["Normal"] * 4)
    m = multiclass_metrics(y, y)
    assert m.accuracy == 1.0
    assert m.per_class["PD"]["sensitivity"] is None


# -- folds and seeds -------------------------------------------------------------------------

def _dataset(subjects, per_subject=1):
    seqs = [static_sequence(f"{s}{i}", s) for s in subjects for i in range(per_subject)]
    return Dataset(seqs, {q.video_id: rated(q.video_id) for q in seqs})


def test_nine_subjects_nine_folds():
    folds = loso_folds(_dataset("ABCDEFGHI", 2))
    assert len(folds) == 9
    tests = [v for f in folds for v in f.test]
    assert sorted(tests) == sorted(q.video_id for q in _dataset("ABCDEFGHI", 2).sequences)
    assert len(set(tests)) == len(tests)
    for f in folds:
        assert not set(f.train) & set(f.test)
        assert all(v.startswith(f.subject) for v in f.test)


def test_two_subjects_complementary_folds():
    a, b = loso_folds(_dataset("AB", 3))
    assert set(a.train) == set(b.test) and set(b.train) == set(a.test)


def test_subject_without_usable_videos_excluded():
    d = _dataset("ABC")
    folds = loso_folds(d, videos=["A0", "B0"])
    assert [f.subject for f in folds] == ["A", "B"]


def test_single_subject_rejected():
    with pytest.raises(ValueError):
        loso_folds(_dataset("A", 3))


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, "k", "S01") == derive_seed(1, "k", "S01")
    assert len({derive_seed(1, "k", s) for s in ("S01", "S02", "S03")}) == 3
    assert 0 <= derive_seed(7, "x") < 2 ** 63


# -- LOSO runs -------------------------------------------------------------------------------

def test_three_blob_multiclass():
    rng = np.random.default_rng(0)
    y = np.array(MULTICLASS * 30, dtype=object)
    centres = {"LID": (0, 6), "Normal": (0, 0), "PD": (6, 0)}
    X = np.array([centres[c] for c in y], float) + rng.normal(size=(90, 2))
    groups = np.repeat(np.arange(9), 10)
    out = loso_predict(X, y, groups, CLASSIFICATION, lambda m: SearchSpace.for_task(CLASSIFICATION, m),
                       iters=3, seed=0, key="blobs", classes=MULTICLASS)
    assert multiclass_metrics(out.predictions, y).accuracy >= 0.9


def test_constant_target_regression():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    y = np.full(30, 2.0)
    out = loso_predict(X, y, np.arange(30) % 3, REGRESSION,
                       lambda m: SearchSpace.for_task(REGRESSION, m), iters=2, seed=0, key="c")
    m = regression_metrics(out.predictions.astype(float), y)
    assert m.rms == 0.0
    assert m.r is None


def test_no_test_subject_row_reaches_training(small_cohort, extractor, monkeypatch):
    table = extractor.subscore_table(small_cohort, Task.COMMUNICATION, "Rarm")
    by_subject = {s: {table.X[i].tobytes() for i in range(len(table)) if table.subject_ids[i] == s}
                  for s in set(table.subject_ids)}
    seen = []
    real = evaluation.fit_on_rows

    def spy(X, *args, **kw):
        seen.append({row.tobytes() for row in X})
        return real(X, *args, **kw)

    monkeypatch.setattr(evaluation, "fit_on_rows", spy)
    run_subscore_experiment(small_cohort, Task.COMMUNICATION, "Rarm", "regression", FAST, extractor)
    assert len(seen) == len(by_subject)
    for subject, rows in zip(sorted(by_subject), seen):
        assert not rows & by_subject[subject]
        assert rows == set().union(*(by_subject[s] for s in by_subject if s != subject))


def test_pooled_predictions_cover_rated_videos(small_cohort, extractor):
    res = run_subscore_experiment(small_cohort, Task.COMMUNICATION, "Neck", "binary", FAST, extractor)
    rated_videos = [s.video_id for s in small_cohort.by_task(Task.COMMUNICATION)
                    if small_cohort.rating(s.video_id).mean(Task.COMMUNICATION, "Neck") is not None]
    assert res.metrics.n == len(rated_videos) == 16
    assert sorted(r["video_id"] for r in res.predictions) == sorted(rated_videos)
    assert res.metrics.n0 == sum(r["truth"] == 0 for r in res.predictions)
    assert all(0 <= r["score"] <= 1 for r in res.predictions)


def test_loso_prediction_matches_single_fold_model(small_cohort, extractor):
    res = run_subscore_experiment(small_cohort, Task.LEG_AGILITY, "Left", "regression", FAST,
                                  extractor)
    table = extractor.subscore_table(small_cohort, Task.LEG_AGILITY, "Left")
    model = train_subscore_model(small_cohort, Task.LEG_AGILITY, "Left", "regression", FAST,
                                 extractor, exclude_subject="S02")
    rows = [i for i, s in enumerate(table.subject_ids) if s == "S02"]
    expected = dict(zip((table.video_ids[i] for i in rows), model.predict(table.X[rows])))
    got = {r["video_id"]: r["prediction"] for r in res.predictions if r["subject_id"] == "S02"}
    assert got == expected


def test_total_score_with_constant_target(small_cohort, extractor):
    ratings = {v: dataclasses.replace(r, udysrs_total=5.0) for v, r in small_cohort.ratings.items()}
    d = Dataset(small_cohort.sequences, ratings)
    res = run_total_score_experiment(d, "UDysRS", FAST, extractor)
    assert res.metrics.n == 16
    assert res.metrics.rms == 0.0
    assert res.metrics.r is None


def test_updrs_total_uses_larger_forests(small_cohort, extractor, monkeypatch):
    spaces = []
    real = evaluation.fit_on_rows

    def spy(X, y, kind, space, *args, **kw):
        spaces.append(space)
        return real(X, y, kind, space, *args, **kw)

    monkeypatch.setattr(evaluation, "fit_on_rows", spy)
    res = run_total_score_experiment(small_cohort, "UPDRS3", FAST, extractor)
    assert {s.n_trees for s in spaces} == {(64, 128)}
    # communication (13 joints), leg agility (all recorded joints) and toe tapping
    assert spaces[0].max_features[1] == res_width(small_cohort, extractor) // 3
    assert res.metrics.n == 16


def res_width(d, extractor):
    table, _ = evaluation.session_table(d, "UPDRS3", extractor)
    return table.X.shape[1]


def test_evaluate_collects_results(small_cohort, extractor):
    cfg = dataclasses.replace(FAST, tasks=("Communication",), experiments=("binary", "multiclass"))
    report = evaluate(small_cohort, cfg, extractor)
    keys = {r.key for r in report.results}
    assert "binary:Communication:Rarm" in keys
    assert "multiclass:Communication:all" in keys
    assert report.fingerprint == cfg.fingerprint()
    mean = report.task_mean("binary", "Communication")
    assert 0 <= mean.auc <= 1
