import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdpose.core import (
    LIMB_JOINTS,
    SKELETON,
    Dataset,
    Joint,
    RatingRecord,
    Subscore,
    Task,
    derive_udysrs_total,
    validate_dataset,
)
from tests.conftest import rated, static_sequence, two_subject_dataset


def test_joint_labels():
    assert len(Joint) == 15
    assert len(SKELETON) == 14
    assert Joint.FACE not in SKELETON
    assert len(LIMB_JOINTS) == 12


def test_task_scales():
    assert Task.COMMUNICATION.scale == Task.DRINKING.scale == "UDysRS"
    assert Task.LEG_AGILITY.scale == Task.TOE_TAPPING.scale == "UPDRS3"


def test_subscore_mean_is_rater_average():
    assert Subscore("Rarm", (1, 2, 4)).mean == pytest.approx(7 / 3)
    assert Subscore("Rarm", (2, 3)).mean == 2.5


def test_sequence_arrays_are_read_only():
    seq = static_sequence()
    with pytest.raises(ValueError):
        seq.joint(Joint.HEAD)[0, 0] = 1.0


def test_missing_confidences_count_as_full():
    seq = static_sequence()
    bare = dataclasses.replace(seq, confidences={})
    assert np.all(bare.confidence(Joint.RWRI) == 1.0)


def test_fps_defaults_to_30():
    seq = static_sequence()
    assert dataclasses.replace(seq).fps == 30.0


def test_well_formed_dataset_has_no_findings(tiny_dataset):
    assert validate_dataset(tiny_dataset) == []


def test_zero_fps_gives_one_finding():
    d = two_subject_dataset()
    bad = dataclasses.replace(d.sequences[0], fps=0.0)
    findings = validate_dataset(Dataset([bad, d.sequences[1]], d.ratings))
    assert len(findings) == 1
    assert findings[0].video_id == "a1"
    assert findings[0].field == "fps"
    assert findings[0].message == "fps must be > 0"


def test_missing_rating_record_is_named():
    d = two_subject_dataset()
    findings = validate_dataset(Dataset(d.sequences, {"a1": d.ratings["a1"]}))
    assert len(findings) == 1
    assert findings[0].video_id == "b1"
    assert "b1" in findings[0].message


def test_single_subject_flagged():
    seq = static_sequence("a1", "A")
    findings = validate_dataset(Dataset([seq], {"a1": rated("a1")}))
    assert [f.field for f in findings] == ["subjects"]


def test_confidence_out_of_range_flagged():
    seq = static_sequence()
    conf = dict(seq.confidences)
    conf[Joint.RWRI] = np.full(seq.frames, 1.5)
    bad = dataclasses.replace(seq, confidences=conf)
    d = Dataset([bad, static_sequence("b1", "B")], {"v1": rated("v1"), "b1": rated("b1")})
    assert [f.field for f in validate_dataset(d)] == ["confidences.Rwri"]


def test_overlapping_subtasks_flagged():
    seq = static_sequence(subtasks=((0, 30), (30, 59)))
    d = Dataset([seq, static_sequence("b1", "B")], {"v1": rated("v1"), "b1": rated("b1")})
    assert [f.field for f in validate_dataset(d)] == ["subtasks"]


def test_rating_outside_anchors_flagged():
    d = two_subject_dataset()
    ratings = dict(d.ratings)
    ratings["a1"] = RatingRecord("a1", {(Task.COMMUNICATION, "Rarm"): Subscore("Rarm", (5,))})
    findings = validate_dataset(Dataset(d.sequences, ratings))
    assert [(f.video_id, f.field) for f in findings] == [("a1", "ratings.Communication.Rarm")]


def _full_udysrs(video_id, task, means):
    labels = ("Face", "Neck", "Rarm", "Larm", "Trunk", "Rleg", "Lleg")
    return RatingRecord(video_id, {(task, lab): Subscore(lab, (m,)) for lab, m in zip(labels, means)})


def test_udysrs_total_takes_highest_per_part():
    a = _full_udysrs("c", Task.COMMUNICATION, (1, 2, 0, 0, 4, 1, 1))
    b = _full_udysrs("d", Task.DRINKING, (3, 1, 2, 0, 0, 1, 0))
    # per part maxima: 3, 2, 2, 0, 4, 1, 1
    assert derive_udysrs_total([a, b]) == 13


def test_udysrs_total_needs_every_part():
    rec = RatingRecord("c", {(Task.COMMUNICATION, "Neck"): Subscore("Neck", (2,))})
    assert derive_udysrs_total([rec]) is None


def test_inconsistent_udysrs_total_flagged():
    a = _full_udysrs("a1", Task.COMMUNICATION, (1, 1, 1, 1, 1, 1, 1))
    a = dataclasses.replace(a, udysrs_total=9.0)
    seqs = [static_sequence("a1", "A"), static_sequence("b1", "B")]
    findings = validate_dataset(Dataset(seqs, {"a1": a, "b1": rated("b1")}))
    assert [f.field for f in findings] == ["udysrs_total"]


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(4)), st.floats(-2.0, 0.0))
def test_validation_is_order_insensitive(perm, fps):
    seqs = [static_sequence(f"v{i}", f"s{i % 2}") for i in range(4)]
    seqs[1] = dataclasses.replace(seqs[1], fps=fps)
    ratings = {s.video_id: rated(s.video_id) for s in seqs[:3]}
    forward = validate_dataset(Dataset(seqs, ratings))
    shuffled = validate_dataset(Dataset([seqs[i] for i in perm], ratings))
    assert forward == shuffled
    assert len(forward) == 2
