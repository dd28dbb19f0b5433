"""
Static simulation world: a ground class grid, extruded obstacle footprints,
the start pose and the route, all in a local east/north frame (meters)
anchored at a geographic origin.
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from shapely.geometry import LineString, Point, Polygon, box
from shapely.ops import unary_union
from shapely.prepared import prep

from config.settings import RENDER_MAX_RANGE_M
from src.bev import CLASS_IDS, CameraIntrinsics
from src.errors import WorldError
from src.formats import read_json, read_route_file, write_json
from src.geodesy import GeoPoint, LocalOffset, Pose, geo_to_offset, offset_to_geo
from src.route import Route, cross_track_distance, straight_route
from utils.helpers import log_message, resolve_relative

PathLike = Union[str, Path]

TRAVERSABLE_CLASSES = frozenset(CLASS_IDS[name] for name in ("none", "road", "sidewalk", "terrain"))
SKY_CLASS = CLASS_IDS["sky"]
DEFAULT_ORIGIN = GeoPoint(34.7000000, 137.4100000)


@dataclass(frozen=True)
class Obstacle:
    class_id: int
    footprint: Polygon
    height_m: float

    def edges(self) -> np.ndarray:
        """(K, 4) array of footprint edges as x0, y0, x1, y1."""
        coords = np.asarray(self.footprint.exterior.coords)
        return np.hstack((coords[:-1], coords[1:]))


def _obstacle_from_dict(data: Dict[str, Any]) -> Obstacle:
    class_id = int(data["class_id"])
    height = float(data.get("height_m", 1.5))
    if "rect" in data:
        x0, y0, x1, y1 = data["rect"]
        footprint = box(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
    elif "polyline" in data:
        half = float(data.get("thickness_m", 0.3)) / 2.0
        footprint = LineString(data["polyline"]).buffer(half, cap_style="flat", join_style="mitre")
    else:
        raise WorldError(f"Obstacle needs 'rect' or 'polyline': {data}")
    if not 0 <= class_id < len(CLASS_IDS) or height <= 0:
        raise WorldError(f"Invalid obstacle class or height: {data}")
    return Obstacle(class_id, footprint, height)


class World:
    """
    Read-only world shared by all episodes of a run.
    """
    def __init__(self, origin: GeoPoint, bounds: Tuple[float, float, float, float], cell_m: float,
                 base_class: int, regions: Sequence[Dict[str, Any]], obstacles: Sequence[Dict[str, Any]],
                 start: Dict[str, float], route: Route):
        x_min, y_min, x_max, y_max = bounds
        if x_max <= x_min or y_max <= y_min or cell_m <= 0:
            raise WorldError(f"Invalid world bounds {bounds} or cell size {cell_m}")
        self.origin = origin
        self.bounds = (float(x_min), float(y_min), float(x_max), float(y_max))
        self.cell_m = float(cell_m)
        self.base_class = int(base_class)
        self.region_specs = [dict(r) for r in regions]
        self.obstacle_specs = [dict(o) for o in obstacles]
        self.start_spec = dict(start)
        self.route = route

        rows = int(math.ceil((y_max - y_min) / cell_m))
        cols = int(math.ceil((x_max - x_min) / cell_m))
        self.class_grid = np.full((rows, cols), self.base_class, dtype=np.uint8)
        for region in self.region_specs:
            self._paint(region["rect"], int(region["class_id"]))

        self.obstacles: List[Obstacle] = [_obstacle_from_dict(o) for o in self.obstacle_specs]
        self._obstacle_union = unary_union([o.footprint for o in self.obstacles]) if self.obstacles else None
        self._prepared = prep(self._obstacle_union) if self._obstacle_union is not None else None
        self._edges = self._collect_edges()
        self.route_xy = route.polyline_m(origin)
        self.route_line = LineString(self.route_xy)
        self._validate_route()
        log_message(f"World ready: {cols}x{rows} cells, {len(self.obstacles)} obstacles, {len(route)} route points")

    # -------------------------------------------------------------------------
    # Construction helpers
    # -------------------------------------------------------------------------
    def _paint(self, rect: Sequence[float], class_id: int):
        x0, y0, x1, y1 = rect
        x_min, y_min, _, _ = self.bounds
        r0 = max(int(math.floor((min(y0, y1) - y_min) / self.cell_m)), 0)
        r1 = min(int(math.ceil((max(y0, y1) - y_min) / self.cell_m)), self.class_grid.shape[0])
        c0 = max(int(math.floor((min(x0, x1) - x_min) / self.cell_m)), 0)
        c1 = min(int(math.ceil((max(x0, x1) - x_min) / self.cell_m)), self.class_grid.shape[1])
        self.class_grid[r0:r1, c0:c1] = class_id

    def _collect_edges(self) -> np.ndarray:
        """(E, 6) array: x0, y0, x1, y1, height, class id."""
        rows = []
        for obstacle in self.obstacles:
            for edge in obstacle.edges():
                rows.append([*edge, obstacle.height_m, obstacle.class_id])
        return np.array(rows, dtype=np.float64).reshape(-1, 6)

    def _validate_route(self):
        problems = []
        for i, (x, y) in enumerate(self.route_xy):
            cls = int(self.ground_class(np.array([x]), np.array([y]))[0])
            if cls not in TRAVERSABLE_CLASSES:
                problems.append(f"route point {i} lies on class {cls}")
            elif self._prepared is not None and self._prepared.contains(Point(x, y)):
                problems.append(f"route point {i} lies inside an obstacle")
        if problems:
            raise WorldError("Route is not traversable: " + "; ".join(problems))

    # -------------------------------------------------------------------------
    # Loading and saving
    # -------------------------------------------------------------------------
    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_path: Optional[PathLike] = None,
                  route_override: Optional[Route] = None) -> "World":
        try:
            origin = GeoPoint(float(data["origin"]["lat_deg"]), float(data["origin"]["lon_deg"]))
            if route_override is not None:
                route = route_override
            elif isinstance(data["route"], str):
                route_path = resolve_relative(base_path, [data["route"]])[0] if base_path else data["route"]
                route = Route(read_route_file(route_path))
            else:
                route = Route(tuple(GeoPoint(float(p["lat_deg"]), float(p["lon_deg"])) for p in data["route"]))
            return cls(
                origin=origin,
                bounds=tuple(data["bounds"]),
                cell_m=float(data.get("cell_m", 0.5)),
                base_class=int(data.get("base_class", CLASS_IDS["terrain"])),
                regions=data.get("regions", []),
                obstacles=data.get("obstacles", []),
                start=data.get("start", {"x_m": 0.0, "y_m": 0.0, "bearing_deg": 0.0}),
                route=route,
            )
        except (KeyError, TypeError) as e:
            raise WorldError(f"Malformed world description: missing or invalid {e}") from e

    @classmethod
    def from_file(cls, path: PathLike, route_override: Optional[Route] = None) -> "World":
        log_message(f"Loading world from {path}")
        return cls.from_dict(read_json(path), base_path=path, route_override=route_override)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "origin": {"lat_deg": self.origin.lat_deg, "lon_deg": self.origin.lon_deg},
            "bounds": list(self.bounds),
            "cell_m": self.cell_m,
            "base_class": self.base_class,
            "regions": self.region_specs,
            "obstacles": self.obstacle_specs,
            "start": self.start_spec,
            "route": [{"lat_deg": p.lat_deg, "lon_deg": p.lon_deg} for p in self.route.points],
        }

    def to_file(self, path: PathLike):
        write_json(path, self.to_dict())

    # -------------------------------------------------------------------------
    # Queries
    # -------------------------------------------------------------------------
    @property
    def start_pose(self) -> Pose:
        position = self.to_geo(float(self.start_spec.get("x_m", 0.0)), float(self.start_spec.get("y_m", 0.0)))
        return Pose(position, float(self.start_spec.get("bearing_deg", 0.0)))

    def to_local(self, point: GeoPoint) -> np.ndarray:
        offset = geo_to_offset(self.origin, point)
        return np.array([offset.dx_m, offset.dy_m])

    def to_geo(self, x_m: float, y_m: float) -> GeoPoint:
        return offset_to_geo(self.origin, LocalOffset(x_m, y_m))

    def ground_class(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Ground class under each east/north point (0 outside the world bounds)."""
        x_min, y_min, _, _ = self.bounds
        rows = np.floor((np.asarray(y) - y_min) / self.cell_m).astype(np.int64)
        cols = np.floor((np.asarray(x) - x_min) / self.cell_m).astype(np.int64)
        inside = (rows >= 0) & (rows < self.class_grid.shape[0]) & (cols >= 0) & (cols < self.class_grid.shape[1])
        out = np.zeros(rows.shape, dtype=np.uint8)
        out[inside] = self.class_grid[rows[inside], cols[inside]]
        return out

    def hits_obstacle(self, footprint: Polygon) -> bool:
        return self._prepared is not None and self._prepared.intersects(footprint)

    def cross_track_m(self, x_m: float, y_m: float) -> float:
        return cross_track_distance(self.route_xy, x_m, y_m)

    def route_lookahead(self, x_m: float, y_m: float, lookahead_m: float) -> np.ndarray:
        """Point on the route `lookahead_m` further along than the projection of (x, y)."""
        along = self.route_line.project(Point(x_m, y_m)) + lookahead_m
        p = self.route_line.interpolate(min(along, self.route_line.length))
        return np.array([p.x, p.y])

    # -------------------------------------------------------------------------
    # Rendering
    # -------------------------------------------------------------------------
    def render(self, x_m: float, y_m: float, bearing_deg: float, intr: CameraIntrinsics,
               max_range_m: float = RENDER_MAX_RANGE_M) -> Tuple[np.ndarray, np.ndarray]:
        """Ground-truth depth (optical-axis meters, inf where nothing is hit) and class rasters."""
        X, Y = intr.ray_grid()
        b = math.radians(bearing_deg)
        p = math.radians(intr.cam_pitch_deg)
        forward = np.array([math.sin(b), math.cos(b)])
        right = np.array([math.cos(b), -math.sin(b)])
        h = intr.cam_height_m

        # Ray direction with unit component along the optical axis
        along = math.cos(p) - Y * math.sin(p)
        dx = X * right[0] + along * forward[0]
        dy = X * right[1] + along * forward[1]
        dz = -math.sin(p) - Y * math.cos(p)
        ray_norm = np.sqrt(dx ** 2 + dy ** 2 + dz ** 2)

        depth = np.full(X.shape, np.inf)
        seg = np.full(X.shape, SKY_CLASS, dtype=np.uint8)

        with np.errstate(divide="ignore", invalid="ignore"):
            lam_ground = np.where(dz < 0, h / -dz, np.inf)
            gx = x_m + lam_ground * dx
            gy = y_m + lam_ground * dy
        ground = np.isfinite(lam_ground)
        depth[ground] = lam_ground[ground]
        seg[ground] = self.ground_class(gx[ground], gy[ground])

        for x0, y0, x1, y1, height, class_id in self._edges:
            ex, ey = x1 - x0, y1 - y0
            px, py = x0 - x_m, y0 - y_m
            denom = dx * ey - dy * ex
            with np.errstate(divide="ignore", invalid="ignore"):
                lam = (px * ey - py * ex) / denom
                s = (px * dy - py * dx) / denom
                z = h + lam * dz
            hit = (np.abs(denom) > 1e-12) & (lam > 1e-9) & (s >= 0.0) & (s <= 1.0) & (z >= 0.0) & (z <= height) & (lam < depth)
            depth[hit] = lam[hit]
            seg[hit] = int(class_id)

        too_far = depth * ray_norm > max_range_m
        depth[too_far] = np.inf
        seg[too_far] = SKY_CLASS
        return depth, seg


def build_straight_world(length_m: float = 100.0, road_width_m: float = 6.0,
                         obstacles: Sequence[Dict[str, Any]] = (), origin: GeoPoint = DEFAULT_ORIGIN,
                         spacing_m: float = 12.0) -> World:
    """North-bound straight road from the origin with a route along its centerline."""
    route = straight_route(origin, 0.0, length_m, spacing_m)
    half = road_width_m / 2.0
    return World(
        origin=origin,
        bounds=(-30.0, -10.0, 30.0, length_m + 30.0),
        cell_m=0.5,
        base_class=CLASS_IDS["terrain"],
        regions=[{"class_id": CLASS_IDS["road"], "rect": [-half, -10.0, half, length_m + 30.0]}],
        obstacles=list(obstacles),
        start={"x_m": 0.0, "y_m": 0.0, "bearing_deg": 0.0},
        route=route,
    )


def parked_car(x_min: float, y_min: float, width_m: float = 2.0, length_m: float = 4.5,
               height_m: float = 1.5) -> Dict[str, Any]:
    return {"class_id": CLASS_IDS["car"], "rect": [x_min, y_min, x_min + width_m, y_min + length_m],
            "height_m": height_m}
