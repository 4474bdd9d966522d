import csv
import dataclasses
import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from pdpose.cli import main, predict_rows
from pdpose.config import RunConfig, load_config
from pdpose.core import Joint, Task
from pdpose.dataio import (
    DataError,
    convert_joint_csv,
    load_dataset,
    load_model_bundle,
    load_ratings,
    load_trajectory,
    save_dataset,
    sequence_from_dict,
    sequence_to_dict,
)
from pdpose.evaluation import run_subscore_experiment
from pdpose.features import STANDARD_NAMES, TOETAP_NAMES
from pdpose.pipeline import FeatureExtractor
from pdpose.synthetic import make_cohort


def _video(frames=30, **extra):
    joints = {j.value: [[100.0 + i, 200.0 + 2 * i, 0.9] for i in range(frames)]
              for j in Joint if j is not Joint.FACE}
    return {"video_id": "v1", "subject_id": "s1", "task": "Communication", "fps": 30,
            "frames": frames, "joints": joints, **extra}


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- ingestion ------------------------------------------------------------------------

def test_minimal_fixture_loads(tmp_path):
    traj = _write(tmp_path / "v1.json", json.dumps(_video()))
    ratings = _write(tmp_path / "r.csv", "video_id,task,subscore,rater,rating\n"
                     "v1,Communication,Rarm,0,2\nv1,Communication,Rarm,1,3\n")
    d = load_dataset([traj], [ratings])
    assert len(d.sequences) == 1
    assert d.rating("v1").mean(Task.COMMUNICATION, "Rarm") == 2.5
    assert d.sequences[0].frames == 30


def test_rating_out_of_range_names_field(tmp_path):
    bad = _write(tmp_path / "r.csv", "video_id,task,subscore,rater,rating\n"
                 "v1,Communication,Rarm,0,5\n")
    with pytest.raises(DataError, match=r"line 2: rating") as err:
        load_ratings([bad])
    assert "r.csv" in str(err.value)


def test_null_joint_frames_become_absent():
    d = _video()
    for k in (3, 4, 17):
        d["joints"]["Rwri"][k] = None
    seq = sequence_from_dict(d)
    absent = ~np.isfinite(seq.joint(Joint.RWRI)).all(axis=1)
    assert np.flatnonzero(absent).tolist() == [3, 4, 17]
    assert np.isfinite(seq.joint(Joint.LWRI)).all()


def test_missing_confidence_counts_as_detected():
    d = _video()
    d["joints"]["head"] = [[1.0, 2.0, None]] * 30
    assert np.all(sequence_from_dict(d).confidence(Joint.HEAD) == 1.0)


@pytest.mark.parametrize("mutate, where", [
    (lambda d: d.pop("task"), "task"),
    (lambda d: d.update(task="Dancing"), "Dancing"),
    (lambda d: d["joints"].update(Tail=[]), "joints.Tail"),
    (lambda d: d["joints"]["neck"].__setitem__(2, [1.0, 2.0]), "joints.neck[2]"),
    (lambda d: d.update(frames=31), "frames 31"),
])
def test_malformed_records_are_located(mutate, where):
    d = _video()
    mutate(d)
    with pytest.raises(DataError, match=where.replace("[", r"\[").replace("]", r"\]")):
        sequence_from_dict(d, "clip.json")


def test_bad_json_reports_line(tmp_path):
    path = _write(tmp_path / "v.json", '{\n "video_id": "a",\n oops\n}')
    with pytest.raises(DataError, match="line 3"):
        load_trajectory(path)


def test_joint_csv_converter(tmp_path):
    path = _write(tmp_path / "j.csv", "frame,joint,x,y,confidence\n0,head,1,2,0.5\n2,head,3,4,\n")
    d = convert_joint_csv(path, "v", "s", "Communication")
    assert d["frames"] == 3
    assert d["joints"]["head"] == [[1.0, 2.0, 0.5], None, [3.0, 4.0, None]]
    seq = sequence_from_dict(d)
    assert seq.confidence(Joint.HEAD)[2] == 1.0


def test_trajectory_round_trip_keeps_everything():
    seq = make_cohort(1, 1, seed=2, tasks=(Task.TOE_TAPPING,)).sequences[0]
    back = sequence_from_dict(json.loads(json.dumps(sequence_to_dict(seq))))
    assert back.video_id == seq.video_id and back.session_id == seq.session_id
    for j in seq.positions:
        assert np.array_equal(back.joint(j), seq.joint(j), equal_nan=True)
    assert np.array_equal(back.tracks, seq.tracks, equal_nan=True)
    for side in seq.flows:
        assert all(np.array_equal(a, b) for a, b in zip(back.flows[side], seq.flows[side]))


@settings(max_examples=10, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(0, 10_000))
def test_dataset_round_trip(tmp_path, seed):
    d = make_cohort(2, 2, seed=seed, tasks=(Task.COMMUNICATION, Task.LEG_AGILITY))
    out = tmp_path / str(seed)
    traj, ratings = save_dataset(d, out)
    back = load_dataset([traj], [ratings])
    assert [s.video_id for s in back.sequences] == sorted(s.video_id for s in d.sequences)
    for seq in d.sequences:
        other = next(s for s in back.sequences if s.video_id == seq.video_id)
        assert np.array_equal(other.joint(Joint.RWRI), seq.joint(Joint.RWRI), equal_nan=True)
        assert back.rating(seq.video_id) == d.rating(seq.video_id)


def test_config_yaml_and_json(tmp_path):
    y = _write(tmp_path / "c.yaml", "seed: 4\nsearch_iters: 7\ntrajectories: data\n"
               "welch: {nperseg: 128}\n")
    cfg = load_config(y)
    assert (cfg.seed, cfg.search_iters, cfg.welch.nperseg) == (4, 7, 128)
    assert cfg.trajectories == (str(tmp_path / "data"),)
    j = _write(tmp_path / "c.json", json.dumps({"seed": 4, "search_iters": 7,
                                                "welch": {"nperseg": 128}}))
    assert load_config(j).fingerprint() == cfg.fingerprint()
    assert RunConfig(seed=5).fingerprint() != cfg.fingerprint()


def test_config_rejects_bad_values(tmp_path):
    with pytest.raises(ValueError):
        RunConfig(search_iters=0)
    with pytest.raises(ValueError):
        load_config(_write(tmp_path / "c.yaml", "colour: blue\n"))


# -- command line ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cohort = make_cohort(3, 2, seed=5, tasks=(Task.COMMUNICATION, Task.DRINKING,
                                              Task.TOE_TAPPING))
    traj, ratings = save_dataset(cohort, root / "data")
    cfg = root / "run.yaml"
    cfg.write_text(f"trajectories: {traj}\nratings: {ratings}\nsearch_iters: 3\nseed: 2\n",
                   encoding="utf-8")
    return {"root": root, "cohort": cohort, "config": str(cfg), "traj": traj}


@pytest.fixture(scope="module")
def evaluated(workspace):
    out = workspace["root"] / "eval"
    code = main(["evaluate", "--config", workspace["config"], "--out", str(out),
                 "--task", "Communication,ToeTapping"])
    assert code == 0
    return out


def test_validate_clean_dataset(workspace, capsys):
    assert main(["validate", "--config", workspace["config"]]) == 0
    assert "0 finding(s)" in capsys.readouterr().err


def test_extract_is_deterministic(workspace):
    a, b = workspace["root"] / "fa", workspace["root"] / "fb"
    for out in (a, b):
        assert main(["extract", "--config", workspace["config"], "--out", str(out)]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    assert "Communication_Trunk.csv" in files and "ToeTapping_Left.csv" in files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()

    trunk = (a / "Communication_Trunk.csv").read_text().splitlines()
    header = trunk[0].split(",")
    assert header[:3] == ["video_id", "subject_id", "config_fingerprint"]
    assert len(header) - 3 == 2 * 32
    assert len(trunk) == 1 + 6
    toe = (a / "ToeTapping_Right.csv").read_text().splitlines()[0].split(",")
    assert len(toe) - 3 == 95
    assert toe[3:] == [f"Right.{n}" for n in TOETAP_NAMES]
    neck = (a / "Communication_Neck.csv").read_text().splitlines()[0].split(",")
    assert neck[3:] == [f"face.{n}" for n in STANDARD_NAMES]


def test_evaluate_outputs(evaluated):
    names = {p.name for p in evaluated.iterdir()}
    assert {"metrics.csv", "predictions.csv", "multiclass.csv", "config.json", "tables.md",
            "models.json", "figures"} <= names
    figs = {p.name for p in (evaluated / "figures").iterdir()}
    assert {"regression_Communication.png", "roc_ToeTapping.png"} <= figs
    assert all((evaluated / "figures" / f).stat().st_size > 0 for f in figs)
    metrics = _read_rows(evaluated / "metrics.csv")
    fp = json.loads((evaluated / "config.json").read_text())["config_fingerprint"]
    for name in ("metrics.csv", "predictions.csv", "multiclass.csv"):
        assert {r["config_fingerprint"] for r in _read_rows(evaluated / name)} == {fp}
    assert fp in (evaluated / "tables.md").read_text()
    assert load_model_bundle(evaluated / "models.json")["config_fingerprint"] == fp
    binary = [r for r in metrics if r["experiment"] == "binary"]
    assert binary and all(r["n"] and r["n0"] != "" for r in binary)


def test_tables_show_counts_and_missing_cells(evaluated):
    tables = (evaluated / "tables.md").read_text()
    assert "| n0 |" in tables and "| n |" in tables
    # quiet and dyskinetic sessions are rated, but toe-tapping truth can be all one class
    metrics = _read_rows(evaluated / "metrics.csv")
    for row in metrics:
        if row["experiment"] == "binary" and row["auc"] == "":
            assert "n/a" in tables


def test_missing_ratings_are_not_zero(tmp_path):
    from pdpose.report import render_markdown

    rows = [{"experiment": "binary", "task": "Communication", "subscore": "Rarm", "n": "10",
             "n0": "10", "rms": "", "r": "", "f1": "", "auc": "", "accuracy": "1.0"}]
    text = render_markdown(rows, fingerprint="abc")
    auc_line = next(line for line in text.splitlines() if line.startswith("| AUC"))
    assert "n/a" in auc_line and "0.000" not in auc_line


def test_report_rerender_is_identical(evaluated):
    before = {p: p.read_bytes() for p in [evaluated / "tables.md",
                                          *sorted((evaluated / "figures").iterdir())]}
    assert main(["report", "--out", str(evaluated)]) == 0
    for p, data in before.items():
        assert p.read_bytes() == data


def test_predict_matches_loso_fold(workspace, evaluated, capsys, tmp_path):
    bundle = load_model_bundle(evaluated / "models.json")
    video = sorted(workspace["traj"].glob("S02-*Communication.json"))[0]
    seq = load_trajectory(video)
    rows = predict_rows(bundle, seq)
    assert {(r["subscore"], r["mode"]) for r in rows} >= {("Rarm", "regression"), ("Rarm", "binary")}

    cfg = RunConfig.from_dict(bundle["config"])
    res = run_subscore_experiment(workspace["cohort"], Task.COMMUNICATION, "Rarm", "regression",
                                  cfg, FeatureExtractor(cfg))
    loso = next(p["prediction"] for p in res.predictions if p["video_id"] == seq.video_id)
    full = next(r["prediction"] for r in rows if r["subscore"] == "Rarm" and r["mode"] == "regression")
    # the bundle model sees every subject, so compare against the matching fold model
    from pdpose.evaluation import train_subscore_model
    fold = train_subscore_model(workspace["cohort"], Task.COMMUNICATION, "Rarm", "regression", cfg,
                                exclude_subject="S02")
    fold_bundle = dict(bundle, models=[{"task": "Communication", "subscore": "Rarm",
                                        "mode": "regression", "model": fold}])
    assert predict_rows(fold_bundle, seq)[0]["prediction"] == loso
    assert isinstance(full, float)

    out = tmp_path / "p"
    assert main(["predict", str(evaluated / "models.json"), str(video), "--out", str(out)]) == 0
    first = capsys.readouterr().out
    assert main(["predict", str(evaluated / "models.json"), str(video)]) == 0
    assert capsys.readouterr().out == first
    assert (out / "predictions.csv").read_text() == first
    assert bundle["config_fingerprint"] in first


def test_predict_wrong_task_is_schema_mismatch(workspace, evaluated, capsys):
    video = sorted(workspace["traj"].glob("*Drinking.json"))[0]
    assert main(["predict", str(evaluated / "models.json"), str(video)]) == 2
    err = capsys.readouterr().err
    assert "schema mismatch" in err and "missing features" in err


def test_predict_missing_joint_lists_features(workspace, evaluated):
    bundle = load_model_bundle(evaluated / "models.json")
    seq = load_trajectory(sorted(workspace["traj"].glob("*Communication.json"))[0])
    positions = {j: p for j, p in seq.positions.items() if j is not Joint.RELB}
    broken = dataclasses.replace(seq, positions=positions)
    with pytest.raises(DataError, match="Relb"):
        predict_rows(bundle, broken)


# -- exit codes -----------------------------------------------------------------------------

def test_exit_usage(capsys, tmp_path):
    assert main(["evaluate", "--seed", "x"]) == 1
    assert main(["evaluate", "--task", "Dancing"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["evaluate", "--config", str(tmp_path / "none.yaml")]) == 1
    assert main(["evaluate"]) == 1  # no trajectories


def test_exit_data(tmp_path):
    bad = _write(tmp_path / "v.json", "{not json")
    assert main(["validate", "--trajectories", str(bad)]) == 2
    assert main(["report", "--out", str(tmp_path / "empty")]) == 2
    assert main(["extract", "--trajectories", str(tmp_path / "missing")]) == 2


def test_exit_validate_findings(tmp_path):
    traj = _write(tmp_path / "v1.json", json.dumps(_video()))
    # a single subject and no ratings are dataset findings
    assert main(["validate", "--trajectories", str(traj)]) == 2


def test_exit_experiment(tmp_path):
    # one subject cannot be cross-validated
    d = make_cohort(1, 2, seed=0)
    traj, ratings = save_dataset(d, tmp_path)
    code = main(["evaluate", "--trajectories", str(traj), "--ratings", str(ratings),
                 "--out", str(tmp_path / "o"), "--no-figures"])
    assert code == 3


def test_synth_command(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--subjects", "2", "--sessions", "2",
                 "--task", "LegAgility"]) == 0
    d = load_dataset([tmp_path / "trajectories"], [tmp_path / "ratings.csv"])
    assert len(d.sequences) == 4
    assert {s.task for s in d.sequences} == {Task.LEG_AGILITY}
