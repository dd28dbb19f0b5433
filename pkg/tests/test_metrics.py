import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from src.errors import EvaluationError
from src.formats import write_pgm
from src.metrics import (
    ScoreReport,
    TaskLosses,
    drivability,
    events_from_records,
    iou,
    mae,
    mean_std,
    mtl_loss,
    one_hot,
    record_scores,
    seg_loss,
    total_metric,
)
from src.vehicle_sim import InterventionCause, InterventionEvent

rasters = arrays(np.uint8, (6, 6), elements=st.integers(0, 4))


def reference_seg_loss(pred, truth, eps=1e-7):
    """Element-by-element cross-entropy plus dice."""
    n, ce, inter, total = 0, 0.0, 0.0, 0.0
    for p, t in zip(np.ravel(pred), np.ravel(truth)):
        q = min(max(p, eps), 1.0 - eps)
        ce -= t * math.log(q) + (1.0 - t) * math.log(1.0 - q)
        inter += p * t
        total += p + t
        n += 1
    return ce / n + (1.0 - 2.0 * inter / total)


def reference_iou(pred, truth):
    scores = []
    for cls in set(np.ravel(pred)) | set(np.ravel(truth)):
        both = sum(1 for p, t in zip(np.ravel(pred), np.ravel(truth)) if p == cls and t == cls)
        either = sum(1 for p, t in zip(np.ravel(pred), np.ravel(truth)) if p == cls or t == cls)
        scores.append(both / either)
    return sum(scores) / len(scores)


def event(start, end, cause=InterventionCause.PREDICTED_COLLISION):
    return InterventionEvent(start, end, cause)


# ------------------------------
# seg_loss
# ------------------------------
def test_perfect_prediction_has_near_zero_loss():
    truth = one_hot(np.array([[0, 1], [2, 1]]), class_count=3)
    assert seg_loss(truth, truth) == pytest.approx(0.0, abs=1e-6)


def test_uniform_prediction_on_balanced_truth():
    truth = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert seg_loss(np.full((2, 2), 0.5), truth) == pytest.approx(math.log(2.0) + 0.5)


def test_seg_loss_matches_reference_on_random_case():
    rng = np.random.default_rng(8)
    pred = rng.uniform(0.0, 1.0, size=(3, 8, 8))
    truth = one_hot(rng.integers(0, 3, size=(8, 8)), class_count=3)
    assert seg_loss(pred, truth) == pytest.approx(reference_seg_loss(pred, truth), abs=1e-9)


@given(arrays(np.float64, (4, 4), elements=st.floats(0.0, 1.0)), arrays(np.float64, (4, 4), elements=st.sampled_from([0.0, 1.0])))
def test_seg_loss_is_non_negative(pred, truth):
    assert seg_loss(pred, truth) >= -1e-12


def test_seg_loss_shape_mismatch():
    with pytest.raises(ValueError):
        seg_loss(np.zeros((2, 2)), np.zeros((3, 3)))


def test_one_hot_rejects_unknown_class():
    with pytest.raises(ValueError):
        one_hot(np.array([[20]]))


# ------------------------------
# mae
# ------------------------------
def test_mae_examples():
    wp = np.arange(6, dtype=float)
    assert mae(wp, wp) == 0.0
    assert mae(wp + 0.1, wp) == pytest.approx(0.1)
    assert mae(0.3, 0.5) == pytest.approx(0.2)


@given(*(arrays(np.float64, 6, elements=st.floats(-50.0, 50.0)) for _ in range(3)))
def test_mae_triangle_inequality(a, b, c):
    assert mae(a, c) <= mae(a, b) + mae(b, c) + 1e-9


# ------------------------------
# iou
# ------------------------------
def test_identical_rasters_score_one():
    raster = np.array([[0, 1, 1], [3, 3, 19]])
    assert iou(raster, raster) == 1.0


def test_disjoint_masks_score_zero():
    assert iou(np.full((3, 3), 1), np.full((3, 3), 2)) == 0.0


def test_half_overlap_rectangles():
    pred = np.zeros((4, 4), dtype=np.uint8)
    truth = np.zeros((4, 4), dtype=np.uint8)
    pred[:, 0:2] = 1
    truth[:, 1:3] = 1
    assert iou(pred, truth) == pytest.approx(1.0 / 3.0)


def test_iou_matches_reference_on_random_rasters():
    rng = np.random.default_rng(21)
    for _ in range(100):
        pred = rng.integers(0, 5, size=(6, 7))
        truth = rng.integers(0, 5, size=(6, 7))
        assert iou(pred, truth) == pytest.approx(reference_iou(pred, truth), abs=1e-12)


@given(rasters, rasters)
@settings(max_examples=50)
def test_iou_symmetric_and_bounded(pred, truth):
    score = iou(pred, truth)
    assert 0.0 <= score <= 1.0
    assert score == pytest.approx(iou(truth, pred))


def test_correct_cells_do_not_lower_iou():
    truth = np.array([[1, 1, 2, 2], [1, 1, 2, 2]])
    pred = np.array([[1, 2, 2, 2], [2, 1, 1, 2]])
    fixed = pred.copy()
    fixed[0, 1] = truth[0, 1]
    assert iou(fixed, truth) >= iou(pred, truth)


# ------------------------------
# total metric and multi-task loss
# ------------------------------
@pytest.mark.parametrize("scores, expected", [
    ((0.8899, 0.1632, 0.0074), 0.2807),
    ((0.8623, 0.1611, 0.0041), 0.3030),
    ((1.0, 0.0, 0.0), 0.0),
])
def test_total_metric(scores, expected):
    assert total_metric(*scores) == pytest.approx(expected, abs=5e-4)


def test_total_metric_direction():
    base = total_metric(0.8, 0.1, 0.1)
    assert total_metric(0.9, 0.1, 0.1) < base
    assert total_metric(0.8, 0.2, 0.1) > base
    assert total_metric(0.8, 0.1, 0.2) > base


def test_mtl_loss():
    assert mtl_loss(TaskLosses(1.0, 2.0, 3.0, 4.0)) == 10.0
    assert mtl_loss(TaskLosses(1.0, 2.0, 3.0, 4.0, alphas=(1.0, 0.0, 1.0, 1.0))) == 8.0
    assert mtl_loss(TaskLosses(1.0, 2.0, 3.0, 4.0, alphas=(2.0, 1.0, 1.0, 1.0))) == 11.0


def test_negative_task_loss_is_rejected():
    with pytest.raises(ValueError):
        TaskLosses(-1.0, 0.0, 0.0, 0.0)


# ------------------------------
# Drivability
# ------------------------------
def test_counts_across_three_runs():
    stats = drivability([[event(0, 1)], [event(5, 5)], [event(0, 0), event(3, 4)]])
    assert stats.count_mean == pytest.approx(1.3333, abs=1e-4)
    assert stats.count_std == pytest.approx(0.57735, abs=1e-5)
    assert stats.runs == 3


def test_no_events_give_zero():
    stats = drivability([[], [], []])
    assert (stats.count_mean, stats.count_std, stats.seconds_mean, stats.seconds_std) == (0.0, 0.0, 0.0, 0.0)


def test_durations_are_summed_per_run_before_averaging():
    # Run 1: 2 ticks + 3 ticks = 1.25 s; run 2: 1 tick = 0.25 s
    stats = drivability([[event(0, 1), event(10, 12)], [event(4, 4)]], dt=0.25)
    assert stats.seconds_mean == pytest.approx(0.75)
    assert stats.seconds_std == pytest.approx(math.sqrt(0.5))


def test_single_run_has_zero_std():
    assert mean_std([3.0]) == (3.0, 0.0)
    with pytest.raises(EvaluationError):
        mean_std([])


def test_events_are_rebuilt_from_record_flags():
    records = [
        {"tick": 0, "intervention_flag": False, "intervention_id": None},
        {"tick": 1, "intervention_flag": True, "intervention_id": 0, "intervention_cause": "OffRoute"},
        {"tick": 2, "intervention_flag": True, "intervention_id": 0, "intervention_cause": "OffRoute"},
        {"tick": 3, "intervention_flag": False, "intervention_id": None},
        {"tick": 4, "intervention_flag": True, "intervention_id": 1, "intervention_cause": "PredictedCollision"},
    ]
    assert events_from_records(records) == [
        event(1, 2, InterventionCause.OFF_ROUTE),
        event(4, 4, InterventionCause.PREDICTED_COLLISION),
    ]


# ------------------------------
# Record scoring and reports
# ------------------------------
def tick(i, steering, throttle, pred=None, wp_pred=None, wp_gt=None, seg_path=None, flag=False):
    pred = pred or (steering, throttle)
    return {
        "tick": i,
        "steering": steering,
        "throttle": throttle,
        "control_pred": {"steering": pred[0], "throttle": pred[1]},
        "waypoints_pred": wp_pred,
        "waypoints_gt": wp_gt,
        "seg_path": seg_path,
        "intervention_flag": flag,
        "intervention_id": 0 if flag else None,
        "intervention_cause": "PredictedCollision" if flag else None,
    }


def test_record_scores_against_itself(tmp_path):
    wp = [[0.0, 1.25], [0.0, 2.5], [0.0, 3.75]]
    records = [tick(0, 0.1, 0.5, pred=(0.3, 0.5), wp_pred=wp, wp_gt=wp), tick(1, 0.0, 0.6, flag=True)]
    scores = record_scores(records, records, tmp_path, tmp_path, name="run")
    assert scores.mae_st == pytest.approx(0.1)
    assert scores.mae_th == 0.0
    assert scores.mae_wp == 0.0
    assert scores.iou_seg is None and scores.total_metric is None
    assert (scores.interventions, scores.intervention_s) == (1, 0.25)


def test_record_scores_reads_seg_rasters(tmp_path):
    write_pgm(tmp_path / "a.pgm", np.array([[1, 1], [0, 0]], dtype=np.uint8))
    write_pgm(tmp_path / "b.pgm", np.array([[1, 0], [0, 0]], dtype=np.uint8))
    records = [tick(0, 0.0, 0.5, seg_path="a.pgm")]
    truths = [tick(0, 0.0, 0.5, seg_path="b.pgm")]
    scores = record_scores(records, truths, tmp_path, tmp_path)
    assert scores.iou_seg == pytest.approx((0.5 + 2.0 / 3.0) / 2.0)
    assert scores.total_metric == pytest.approx(1.0 - scores.iou_seg)


def test_mismatched_truth_length_is_rejected(tmp_path):
    with pytest.raises(EvaluationError):
        record_scores([tick(0, 0.0, 0.5)], [], tmp_path, tmp_path)
    with pytest.raises(EvaluationError):
        record_scores([], [], tmp_path, tmp_path)


def test_report_summary_and_csv_rows(tmp_path):
    runs = [
        record_scores([tick(0, 0.0, 0.5, pred=(0.2, 0.5))], [tick(0, 0.0, 0.5)], tmp_path, tmp_path, name="a"),
        record_scores([tick(0, 0.0, 0.5, pred=(0.4, 0.5))], [tick(0, 0.0, 0.5)], tmp_path, tmp_path, name="b"),
    ]
    report = ScoreReport(runs)
    summary = report.summary()
    assert summary["mae_st"]["mean"] == pytest.approx(0.3)
    assert summary["mae_st"]["std"] == pytest.approx(math.sqrt(0.02))
    assert summary["iou_seg"] == {"mean": None, "std": None}
    rows = report.to_csv_rows()
    assert [r["record"] for r in rows] == ["a", "b", "mean", "std"]
    assert "macro" in report.to_dict()["iou_averaging"]


def test_empty_report_is_rejected():
    with pytest.raises(EvaluationError):
        ScoreReport([])
