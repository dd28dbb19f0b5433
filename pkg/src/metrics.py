"""
Offline scores and online drivability statistics.

Losses and scores are pure numpy functions. `record_scores` applies them to a
driving record against its ground truth and `ScoreReport` aggregates several
runs as mean and sample standard deviation.
"""
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import CLASS_COUNT, STEP_DT_S
from src.errors import EvaluationError
from src.formats import read_pgm
from src.vehicle_sim import InterventionCause, InterventionEvent

PROBABILITY_CLAMP = 1e-7
IOU_AVERAGING = "macro over classes present in prediction or truth, none class included"


# =============================================================================
# Losses
# =============================================================================
def seg_loss(pred: np.ndarray, truth: np.ndarray, eps: float = PROBABILITY_CLAMP) -> float:
    """Mean binary cross-entropy plus soft dice loss."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"Prediction shape {pred.shape} does not match truth shape {truth.shape}")
    clamped = np.clip(pred, eps, 1.0 - eps)
    ce = -np.mean(truth * np.log(clamped) + (1.0 - truth) * np.log(1.0 - clamped))
    denom = pred.sum() + truth.sum()
    dice = 0.0 if denom == 0 else 1.0 - 2.0 * np.sum(pred * truth) / denom
    return float(ce + dice)


def one_hot(classes: np.ndarray, class_count: int = CLASS_COUNT) -> np.ndarray:
    """(class_count, H, W) indicator stack of a class raster."""
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size and (classes.min() < 0 or classes.max() >= class_count):
        raise ValueError(f"Class ids must lie in [0, {class_count})")
    return (np.arange(class_count)[:, None, None] == classes[None, :, :]).astype(np.float64)


def mae(pred, truth) -> float:
    pred = np.atleast_1d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_1d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise ValueError(f"Prediction shape {pred.shape} does not match truth shape {truth.shape}")
    return float(np.mean(np.abs(pred - truth)))


def iou(pred: np.ndarray, truth: np.ndarray, class_count: int = CLASS_COUNT) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"Prediction shape {pred.shape} does not match truth shape {truth.shape}")
    scores = []
    for cls in range(class_count):
        p, t = pred == cls, truth == cls
        union = np.count_nonzero(p | t)
        if union:
            scores.append(np.count_nonzero(p & t) / union)
    return float(np.mean(scores)) if scores else 1.0


def total_metric(iou_seg: float, mae_st: float, mae_th: float) -> float:
    return (1.0 - iou_seg) + mae_st + mae_th


@dataclass(frozen=True)
class TaskLosses:
    l_seg: float
    l_wp: float
    l_st: float
    l_th: float
    alphas: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if min(self.l_seg, self.l_wp, self.l_st, self.l_th) < 0:
            raise ValueError("Task losses must be non-negative")


def mtl_loss(losses: TaskLosses) -> float:
    a0, a1, a2, a3 = losses.alphas
    return a0 * losses.l_seg + a1 * losses.l_wp + a2 * losses.l_st + a3 * losses.l_th


# =============================================================================
# Drivability
# =============================================================================
def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation; a single value has std 0."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise EvaluationError("No values to average")
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), std


@dataclass(frozen=True)
class DrivabilityStats:
    count_mean: float
    count_std: float
    seconds_mean: float
    seconds_std: float
    runs: int


def drivability(events_per_run: Sequence[Sequence[InterventionEvent]], dt: float = STEP_DT_S) -> DrivabilityStats:
    """Intervention count and total seconds per run, then mean and std across runs."""
    if not events_per_run:
        raise EvaluationError("No runs to summarize")
    counts = [len(events) for events in events_per_run]
    seconds = [sum(e.duration_s(dt) for e in events) for events in events_per_run]
    count_mean, count_std = mean_std(counts)
    seconds_mean, seconds_std = mean_std(seconds)
    return DrivabilityStats(count_mean, count_std, seconds_mean, seconds_std, len(events_per_run))


def events_from_records(records: Sequence[Dict[str, Any]]) -> List[InterventionEvent]:
    """Rebuild intervention events from the per-tick flag and event id."""
    spans: Dict[int, List[int]] = {}
    causes: Dict[int, str] = {}
    for rec in records:
        if rec.get("intervention_flag"):
            event_id = int(rec["intervention_id"])
            spans.setdefault(event_id, []).append(int(rec["tick"]))
            causes.setdefault(event_id, rec.get("intervention_cause", "PredictedCollision"))
    return [InterventionEvent(min(ticks), max(ticks), InterventionCause(causes[i])) for i, ticks in sorted(spans.items())]


# =============================================================================
# Record scoring
# =============================================================================
@dataclass
class RunScores:
    record: str
    ticks: int
    iou_seg: Optional[float]
    mae_wp: Optional[float]
    mae_st: float
    mae_th: float
    total_metric: Optional[float]
    interventions: int
    intervention_s: float


def _seg_iou(records, truths, record_dir: Path, truth_dir: Path) -> Optional[float]:
    scores = []
    for rec, tru in zip(records, truths):
        if not rec.get("seg_path") or not tru.get("seg_path"):
            return None
        scores.append(iou(read_pgm(record_dir / rec["seg_path"]), read_pgm(truth_dir / tru["seg_path"])))
    return float(np.mean(scores)) if scores else None


def record_scores(records: Sequence[Dict[str, Any]], truths: Sequence[Dict[str, Any]],
                  record_dir: Path, truth_dir: Path, name: str = "", dt: float = STEP_DT_S) -> RunScores:
    """Score one run: predicted waypoints and direct control against the truth record."""
    if not records:
        raise EvaluationError(f"Record {name} is empty")
    if len(records) != len(truths):
        raise EvaluationError(f"Record {name} has {len(records)} ticks but its truth has {len(truths)}")

    wp_errors, st_errors, th_errors = [], [], []
    for rec, tru in zip(records, truths):
        if rec.get("waypoints_pred") is not None and tru.get("waypoints_gt") is not None:
            wp_errors.append(mae(np.ravel(rec["waypoints_pred"]), np.ravel(tru["waypoints_gt"])))
        st_errors.append(abs(rec["control_pred"]["steering"] - tru["steering"]))
        th_errors.append(abs(rec["control_pred"]["throttle"] - tru["throttle"]))

    iou_seg = _seg_iou(records, truths, record_dir, truth_dir)
    mae_st = float(np.mean(st_errors))
    mae_th = float(np.mean(th_errors))
    events = events_from_records(records)
    return RunScores(
        record=name,
        ticks=len(records),
        iou_seg=iou_seg,
        mae_wp=float(np.mean(wp_errors)) if wp_errors else None,
        mae_st=mae_st,
        mae_th=mae_th,
        total_metric=None if iou_seg is None else total_metric(iou_seg, mae_st, mae_th),
        interventions=len(events),
        intervention_s=sum(e.duration_s(dt) for e in events),
    )


SCORE_FIELDS = ("iou_seg", "mae_wp", "mae_st", "mae_th", "total_metric", "interventions", "intervention_s")


@dataclass
class ScoreReport:
    runs: List[RunScores] = field(default_factory=list)

    def __post_init__(self):
        if not self.runs:
            raise EvaluationError("A score report needs at least one run")

    def summary(self) -> Dict[str, Dict[str, Optional[float]]]:
        out = {}
        for name in SCORE_FIELDS:
            values = [getattr(r, name) for r in self.runs]
            if any(v is None for v in values):
                out[name] = {"mean": None, "std": None}
            else:
                mean, std = mean_std(values)
                out[name] = {"mean": mean, "std": std}
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iou_averaging": IOU_AVERAGING,
            "runs": [asdict(r) for r in self.runs],
            "summary": self.summary(),
        }

    def to_csv_rows(self) -> List[Dict[str, Any]]:
        """One flat row per run followed by mean and std rows."""
        rows = [asdict(r) for r in self.runs]
        summary = self.summary()
        for stat in ("mean", "std"):
            row: Dict[str, Any] = {"record": stat, "ticks": None}
            row.update({name: summary[name][stat] for name in SCORE_FIELDS})
            rows.append(row)
        return rows
