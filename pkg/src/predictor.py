"""
Waypoint predictors.

Waypoints are always built by accumulating per-step deltas from the vehicle
origin. Three predictors share the `predict(bundle, tick)` interface:

- OraclePredictor: pure-pursuit toward the first route point with a lateral
  shift search around obstacles in the BEV grid.
- PlaybackPredictor: replays the trajectory of a recorded episode.
- StreamPredictor (src.stream_predictor): an external process.
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Sequence

import numpy as np

from config.settings import (
    CRUISE_SPEED_MPS,
    ORACLE_THROTTLE_GAIN,
    RECORD_RATE_HZ,
    SHIFT_LIMIT_M,
    SHIFT_STEP_M,
    V_MAX_MPS,
    WAYPOINT_DELTA_LIMIT_M,
    WAYPOINT_HORIZONS_S,
    YAW_RATE_MAX_RPS,
)
from src.bev import ORIGIN_COL, ORIGIN_ROW, OBSTACLE_CLASSES, BevGrid, local_to_cell, obstacle_mask
from src.controller import STOP, STOP_WAYPOINTS, Control, Waypoints, WheelFeedback, aim_point, linear_speed
from src.errors import EndOfRecordError
from src.geodesy import ORIGIN, GeoPoint, LocalPoint, Pose, route_point_to_local
from src.route import RouteWindow

TICKS_PER_SECOND = RECORD_RATE_HZ
FUTURE_TICKS = tuple(int(round(h * TICKS_PER_SECOND)) for h in WAYPOINT_HORIZONS_S)


@dataclass(frozen=True)
class ObservationBundle:
    bev: BevGrid
    window: RouteWindow
    wheels: WheelFeedback


@dataclass(frozen=True)
class WaypointDelta:
    dx_m: float
    dy_m: float

    def __post_init__(self):
        if not (math.isfinite(self.dx_m) and math.isfinite(self.dy_m)):
            raise ValueError("Non-finite waypoint delta")
        if abs(self.dx_m) > WAYPOINT_DELTA_LIMIT_M or abs(self.dy_m) > WAYPOINT_DELTA_LIMIT_M:
            raise ValueError(f"Waypoint delta ({self.dx_m}, {self.dy_m}) exceeds {WAYPOINT_DELTA_LIMIT_M} m")


@dataclass(frozen=True)
class PredictionOutput:
    waypoints: Waypoints
    control: Control


def accumulate(current: LocalPoint, delta: WaypointDelta) -> LocalPoint:
    return LocalPoint(current.x_m + delta.dx_m, current.y_m + delta.dy_m)


def waypoints_from_deltas(deltas: Sequence[WaypointDelta]) -> Waypoints:
    """Run the three-step accumulation loop starting at the vehicle origin."""
    if len(deltas) != 3:
        raise ValueError(f"Expected 3 deltas, got {len(deltas)}")
    points = []
    current = ORIGIN
    for delta in deltas:
        current = accumulate(current, delta)
        points.append(current)
    return Waypoints(*points)


def deltas_between(points: Sequence[LocalPoint]) -> List[WaypointDelta]:
    deltas, prev = [], ORIGIN
    for p in points:
        deltas.append(WaypointDelta(p.x_m - prev.x_m, p.y_m - prev.y_m))
        prev = p
    return deltas


# =============================================================================
# Oracle predictor
# =============================================================================
@dataclass(frozen=True)
class OracleParams:
    shift_step_m: float = SHIFT_STEP_M
    shift_limit_m: float = SHIFT_LIMIT_M
    clearance_cells: int = 1
    obstacle_classes: FrozenSet[int] = OBSTACLE_CLASSES
    throttle_gain: float = ORACLE_THROTTLE_GAIN
    v_max: float = V_MAX_MPS
    yaw_rate_max: float = YAW_RATE_MAX_RPS


def _heading_unit(window: RouteWindow) -> np.ndarray:
    for rp in (window.rp1, window.rp2):
        if rp.norm() > 1e-6:
            return np.array([rp.x_m, rp.y_m]) / rp.norm()
    return np.array([0.0, 1.0])


def _path_samples(points: np.ndarray, cell_m: float) -> np.ndarray:
    """The waypoints plus cell-spaced samples on the segments joining them."""
    samples = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        n = max(int(math.ceil(np.linalg.norm(b - a) / cell_m)), 1)
        for k in range(1, n + 1):
            samples.append(a + (b - a) * k / n)
    return np.array(samples)


def _is_blocked(mask: np.ndarray, points: np.ndarray, clearance: int, cell_m: float) -> bool:
    rows, cols = mask.shape
    for x, y in _path_samples(points, cell_m):
        cell = local_to_cell(float(x), float(y), cell_m)
        if cell is None:
            continue
        r, c = cell
        if mask[max(r - clearance, 0):min(r + clearance + 1, rows), max(c - clearance, 0):min(c + clearance + 1, cols)].any():
            return True
    return False


def _nearest_obstacle_side(mask: np.ndarray, points: np.ndarray, lateral: np.ndarray, cell_m: float) -> float:
    """Sign of the lateral offset of the obstacle cell nearest to the unshifted path (0 if none)."""
    obstacle_cells = np.argwhere(mask)
    if obstacle_cells.size == 0:
        return 0.0
    centers = np.column_stack((
        (obstacle_cells[:, 1] - ORIGIN_COL + 0.5) * cell_m,
        (ORIGIN_ROW - obstacle_cells[:, 0] + 0.5) * cell_m,
    ))
    dists = np.linalg.norm(centers[:, None, :] - points[None, :, :], axis=2)
    flat = int(np.argmin(dists))
    cell_idx, point_idx = divmod(flat, points.shape[0])
    return float(np.sign(np.dot(centers[cell_idx] - points[point_idx], lateral)))


def shift_candidates(step: float, limit: float, preferred_sign: float) -> List[float]:
    """0, then ±step, ±2·step, ... up to the limit; at equal magnitude the preferred side first."""
    first = preferred_sign if preferred_sign != 0 else -1.0
    shifts = [0.0]
    n = int(round(limit / step))
    for k in range(1, n + 1):
        shifts.extend([first * k * step, -first * k * step])
    return shifts


def pure_pursuit_predict(obs: ObservationBundle, speed_target: float = CRUISE_SPEED_MPS,
                         params: OracleParams = OracleParams()) -> PredictionOutput:
    """Straight waypoints toward the first route point, shifted sideways around obstacles."""
    heading = _heading_unit(obs.window)
    lateral = np.array([heading[1], -heading[0]])  # right-hand perpendicular
    base = np.array([heading * speed_target * h for h in WAYPOINT_HORIZONS_S])
    mask = obstacle_mask(obs.bev, params.obstacle_classes)
    cell_m = obs.bev.cell_m

    chosen: Optional[np.ndarray] = None
    if not mask.any():
        chosen = base
    else:
        away = -_nearest_obstacle_side(mask, base, lateral, cell_m)
        for shift in shift_candidates(params.shift_step_m, params.shift_limit_m, away):
            candidate = base + shift * lateral
            if not _is_blocked(mask, candidate, params.clearance_cells, cell_m):
                chosen = candidate
                break

    if chosen is None:
        return PredictionOutput(STOP_WAYPOINTS, STOP)

    points = [LocalPoint(float(x), float(y)) for x, y in chosen]
    waypoints = waypoints_from_deltas(deltas_between(points))
    return PredictionOutput(waypoints, pursuit_control(waypoints, obs.wheels, speed_target, params))


def pursuit_control(wp: Waypoints, wheels: WheelFeedback, speed_target: float, params: OracleParams) -> Control:
    """Pure-pursuit steering toward the aim point plus feed-forward/proportional throttle."""
    aim = aim_point(wp)
    dist_sq = aim.x_m ** 2 + aim.y_m ** 2
    curvature = 2.0 * aim.x_m / dist_sq if dist_sq > 1e-12 else 0.0
    steering = speed_target * curvature / params.yaw_rate_max
    throttle = speed_target / params.v_max + params.throttle_gain * (speed_target - linear_speed(wheels))
    return Control(steering, throttle)


class OraclePredictor:
    """
    Fills the learned controller's slot with the pure-pursuit oracle.
    """
    name = "oracle"

    def __init__(self, speed_target: float = CRUISE_SPEED_MPS, params: OracleParams = OracleParams()):
        self.speed_target = speed_target
        self.params = params

    def predict(self, bundle: ObservationBundle, tick: int) -> PredictionOutput:
        return pure_pursuit_predict(bundle, self.speed_target, self.params)

    def close(self):
        pass


# =============================================================================
# Playback predictor
# =============================================================================
def record_pose(record: Dict[str, Any]) -> Pose:
    gnss = record["gnss"]
    return Pose(GeoPoint(gnss["lat"], gnss["lon"]), record["bearing_deg"])


def playback_predict(records: Sequence[Dict[str, Any]], tick_index: int) -> Waypoints:
    """Recorded positions 1, 2 and 3 s ahead, expressed in the vehicle frame of `tick_index`."""
    if tick_index < 0 or tick_index + FUTURE_TICKS[-1] >= len(records):
        raise EndOfRecordError(
            f"Tick {tick_index} needs {FUTURE_TICKS[-1]} future ticks; record has {len(records)} ticks"
        )
    pose = record_pose(records[tick_index])
    points = [route_point_to_local(pose, record_pose(records[tick_index + k]).position) for k in FUTURE_TICKS]
    return waypoints_from_deltas(deltas_between(points))


def ground_truth_waypoints(records: Sequence[Dict[str, Any]]) -> List[Optional[Waypoints]]:
    """Waypoint ground truth for every tick of a record; None where the future is too short."""
    truth: List[Optional[Waypoints]] = []
    for i in range(len(records)):
        try:
            truth.append(playback_predict(records, i))
        except EndOfRecordError:
            truth.append(None)
    return truth


@dataclass
class PlaybackPredictor:
    """
    Replays a recorded episode: recorded trajectory as waypoints, recorded control as the direct estimate.
    """
    records: List[Dict[str, Any]] = field(default_factory=list)
    name: str = "playback"

    def predict(self, bundle: ObservationBundle, tick: int) -> PredictionOutput:
        try:
            waypoints = playback_predict(self.records, tick)
        except EndOfRecordError:
            return PredictionOutput(STOP_WAYPOINTS, STOP)
        rec = self.records[tick]
        return PredictionOutput(waypoints, Control(rec["steering"], rec["throttle"]))

    def close(self):
        pass
