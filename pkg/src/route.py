"""
Route management: the ordered route, the two-route-point window fed to the
predictor, the 4 m switching rule and the route-point-to-command rule.
"""
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from config.settings import (
    COMMAND_FAR_THRESHOLD_M,
    COMMAND_NEAR_THRESHOLD_M,
    ROUTE_SPACING_WARN_RANGE_M,
    ROUTE_SWITCH_RADIUS_M,
)
from src.errors import RouteError
from src.formats import read_route_file, write_route_file
from src.geodesy import (
    GeoPoint,
    LocalOffset,
    LocalPoint,
    Pose,
    distance_m,
    geo_to_offset,
    offset_to_geo,
    route_point_to_local,
)
from utils.helpers import log_message


class NavCommand(str, Enum):
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"
    GO_STRAIGHT = "GoStraight"


@dataclass(frozen=True)
class Route:
    points: Tuple[GeoPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if len(self.points) < 2:
            raise RouteError(f"A route needs at least 2 points, got {len(self.points)}")
        low, high = ROUTE_SPACING_WARN_RANGE_M
        for i, (a, b) in enumerate(zip(self.points, self.points[1:])):
            gap = distance_m(a, b)
            if not low <= gap <= high:
                log_message(f"Route points {i} and {i + 1} are {gap:.2f} m apart "
                            f"(expected {low:g}-{high:g} m)", level="warning")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "Route":
        return cls(read_route_file(path))

    def to_file(self, path: Union[str, Path]):
        write_route_file(path, self.points)

    def polyline_m(self, origin: GeoPoint) -> np.ndarray:
        """Route as an (N, 2) array of east/north meters relative to `origin`."""
        offsets = [geo_to_offset(origin, p) for p in self.points]
        return np.array([[o.dx_m, o.dy_m] for o in offsets])


@dataclass(frozen=True)
class RouteTracker:
    route: Route
    current_index: int = 0
    switch_radius_m: float = ROUTE_SWITCH_RADIUS_M

    def __post_init__(self):
        if not 0 <= self.current_index < len(self.route):
            raise RouteError(f"Route index {self.current_index} outside route of length {len(self.route)}")
        if self.switch_radius_m <= 0:
            raise RouteError("Switch radius must be positive")

    @classmethod
    def start(cls, route: Route, switch_radius_m: float = ROUTE_SWITCH_RADIUS_M) -> "RouteTracker":
        return cls(route=route, current_index=0, switch_radius_m=switch_radius_m)

    @property
    def current_point(self) -> GeoPoint:
        return self.route.points[self.current_index]

    @property
    def is_last(self) -> bool:
        return self.current_index == len(self.route) - 1


@dataclass(frozen=True)
class RouteWindow:
    rp1: LocalPoint
    rp2: LocalPoint

    def to_dict(self) -> dict:
        return {"rp1": self.rp1.as_list(), "rp2": self.rp2.as_list()}


def advance(tracker: RouteTracker, pose: Pose) -> Tuple[RouteTracker, bool]:
    """Apply the switching rule; returns the updated tracker and the finished flag.

    Several switches may happen in one tick when the vehicle jumps past points.
    """
    index = tracker.current_index
    last = len(tracker.route) - 1
    while distance_m(pose.position, tracker.route.points[index]) < tracker.switch_radius_m:
        if index == last:
            return replace(tracker, current_index=index), True
        index += 1
        log_message(f"Route point switched to {index}", level="debug")
    return replace(tracker, current_index=index), False


def window(tracker: RouteTracker, pose: Pose) -> RouteWindow:
    """Current and next route points in the vehicle frame (last point duplicated at route end)."""
    points = tracker.route.points
    nxt = min(tracker.current_index + 1, len(points) - 1)
    return RouteWindow(
        rp1=route_point_to_local(pose, points[tracker.current_index]),
        rp2=route_point_to_local(pose, points[nxt]),
    )


def command(win: RouteWindow) -> NavCommand:
    """High-level command derived from the lateral position of the two route points."""
    x1, x2 = win.rp1.x_m, win.rp2.x_m
    if x1 <= -COMMAND_NEAR_THRESHOLD_M or x2 <= -COMMAND_FAR_THRESHOLD_M:
        return NavCommand.TURN_LEFT
    elif x1 >= COMMAND_NEAR_THRESHOLD_M or x2 >= COMMAND_FAR_THRESHOLD_M:
        return NavCommand.TURN_RIGHT
    else:
        return NavCommand.GO_STRAIGHT


def straight_route(start: GeoPoint, bearing_deg: float, length_m: float, spacing_m: float = 12.0) -> Route:
    """Route of evenly spaced points along a straight line from `start`."""
    count = max(int(round(length_m / spacing_m)), 1)
    step = length_m / count
    b = math.radians(bearing_deg)
    points: List[GeoPoint] = []
    for i in range(count + 1):
        d = i * step
        points.append(offset_to_geo(start, LocalOffset(d * math.sin(b), d * math.cos(b))))
    return Route(tuple(points))


def cross_track_distance(polyline_m: np.ndarray, x_m: float, y_m: float) -> float:
    """Shortest distance from (x, y) to the route polyline, all in local meters."""
    a = polyline_m[:-1]
    ab = polyline_m[1:] - a
    ap = np.array([x_m, y_m]) - a
    length_sq = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(length_sq > 0, np.einsum("ij,ij->i", ap, ab) / length_sq, 0.0)
    closest = a + np.clip(t, 0.0, 1.0)[:, None] * ab
    return float(np.min(np.linalg.norm(closest - np.array([x_m, y_m]), axis=1)))
