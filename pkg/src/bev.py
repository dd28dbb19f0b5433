"""
Bird's-eye-view semantic mapping.

Depth rasters are back-projected through a pinhole camera into a point cloud in
the ground-anchored vehicle frame (x right, y forward, z up), and each point
carries the class of the segmentation pixel it came from. Points are then
dropped into a 128 x 256 grid with the vehicle at the bottom-center cell.
"""
import math
from dataclasses import dataclass, field
from typing import FrozenSet, Tuple

import numpy as np

from config.settings import (
    BEV_CELL_M,
    BEV_COLS,
    BEV_ROWS,
    BEV_Z_MAX_M,
    BEV_Z_MIN_M,
    CAMERA_CX,
    CAMERA_CY,
    CAMERA_FX,
    CAMERA_FY,
    CAMERA_HEIGHT,
    CAMERA_HEIGHT_M,
    CAMERA_PITCH_DEG,
    CAMERA_WIDTH,
    CLASS_COUNT,
)
from src.errors import RasterFormatError

CLASS_NAMES = (
    "none", "road", "sidewalk", "building", "wall", "fence", "pole", "traffic light",
    "traffic sign", "vegetation", "terrain", "sky", "person", "rider", "car", "truck",
    "bus", "train", "motorcycle", "bicycle",
)
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}

# Dynamic and barrier classes a vehicle must not drive through
OBSTACLE_CLASSES: FrozenSet[int] = frozenset(
    CLASS_IDS[name] for name in (
        "wall", "fence", "pole", "person", "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle",
    )
)

ORIGIN_ROW = BEV_ROWS - 1
ORIGIN_COL = BEV_COLS // 2


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = CAMERA_FX
    fy: float = CAMERA_FY
    cx: float = CAMERA_CX
    cy: float = CAMERA_CY
    width: int = CAMERA_WIDTH
    height: int = CAMERA_HEIGHT
    cam_height_m: float = CAMERA_HEIGHT_M
    cam_pitch_deg: float = CAMERA_PITCH_DEG  # positive tilts the optical axis down

    def __post_init__(self):
        errors = []
        if self.fx <= 0 or self.fy <= 0:
            errors.append("focal lengths must be positive")
        if not 0 <= self.cx < self.width:
            errors.append(f"cx={self.cx} outside [0, {self.width})")
        if not 0 <= self.cy < self.height:
            errors.append(f"cy={self.cy} outside [0, {self.height})")
        if errors:
            raise ValueError("Invalid camera intrinsics: " + "; ".join(errors))

    @classmethod
    def from_dict(cls, data: dict) -> "CameraIntrinsics":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)

    def ray_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """Normalized image coordinates (X, Y) per pixel: X to the right, Y down, for unit optical depth."""
        u = np.arange(self.width, dtype=np.float64)
        v = np.arange(self.height, dtype=np.float64)
        uu, vv = np.meshgrid(u, v)
        return (uu - self.cx) / self.fx, (vv - self.cy) / self.fy


@dataclass(frozen=True)
class DepthMap:
    raster: np.ndarray  # meters along the optical axis; non-finite = invalid

    def __post_init__(self):
        if self.raster.ndim != 2:
            raise RasterFormatError(f"Depth raster must be 2-D, got {self.raster.shape}")


@dataclass(frozen=True)
class SegMap:
    raster: np.ndarray  # class ids

    def __post_init__(self):
        if self.raster.ndim != 2:
            raise RasterFormatError(f"Segmentation raster must be 2-D, got {self.raster.shape}")
        if self.raster.size and int(self.raster.max()) >= CLASS_COUNT:
            raise RasterFormatError(f"Class id {int(self.raster.max())} outside the {CLASS_COUNT}-class palette")


@dataclass(frozen=True)
class PointCloud:
    """Points in the vehicle frame with the (row, col) pixel each came from."""
    xyz: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __len__(self) -> int:
        return len(self.xyz)


@dataclass(frozen=True)
class BevGrid:
    raster: np.ndarray
    cell_m: float = BEV_CELL_M

    @classmethod
    def empty(cls) -> "BevGrid":
        return cls(np.zeros((BEV_ROWS, BEV_COLS), dtype=np.uint8))

    def class_at(self, point_x: float, point_y: float) -> int:
        cell = local_to_cell(point_x, point_y)
        if cell is None:
            return 0
        return int(self.raster[cell])


def local_to_cell(x_m: float, y_m: float, cell_m: float = BEV_CELL_M):
    """(row, col) of the cell holding vehicle-frame point (x, y), or None outside the grid."""
    if not (-BEV_COLS * cell_m / 2 <= x_m < BEV_COLS * cell_m / 2 and 0.0 <= y_m < BEV_ROWS * cell_m):
        return None
    return ORIGIN_ROW - math.floor(y_m / cell_m), ORIGIN_COL + math.floor(x_m / cell_m)


def cell_center(row: int, col: int, cell_m: float = BEV_CELL_M) -> Tuple[float, float]:
    return (col - ORIGIN_COL + 0.5) * cell_m, (ORIGIN_ROW - row + 0.5) * cell_m


def depth_to_points(depth: DepthMap, intr: CameraIntrinsics) -> PointCloud:
    """Back-project valid depth pixels into the ground-anchored vehicle frame."""
    raster = np.asarray(depth.raster, dtype=np.float64)
    if raster.shape != (intr.height, intr.width):
        raise RasterFormatError(f"Depth raster {raster.shape} does not match camera {intr.height}x{intr.width}")

    valid = np.isfinite(raster) & (raster > 0)
    rows, cols = np.nonzero(valid)
    if rows.size == 0:
        return PointCloud()

    d = raster[rows, cols]
    x_cam = (cols - intr.cx) / intr.fx * d   # right
    y_cam = (rows - intr.cy) / intr.fy * d   # down
    pitch = math.radians(intr.cam_pitch_deg)
    c, s = math.cos(pitch), math.sin(pitch)

    xyz = np.column_stack((
        x_cam,
        d * c - y_cam * s,
        intr.cam_height_m - d * s - y_cam * c,
    ))
    return PointCloud(xyz=xyz, pixels=np.column_stack((rows, cols)))


def project_to_bev(points: PointCloud, seg: SegMap, cell_m: float = BEV_CELL_M) -> BevGrid:
    """Drop classified points into the BEV grid; the highest point wins each cell (ties: smaller class id)."""
    grid = np.zeros((BEV_ROWS, BEV_COLS), dtype=np.uint8)
    if len(points) == 0:
        return BevGrid(grid, cell_m)

    x, y, z = points.xyz[:, 0], points.xyz[:, 1], points.xyz[:, 2]
    half_width = BEV_COLS * cell_m / 2
    keep = (
        (x >= -half_width) & (x < half_width)
        & (y >= 0.0) & (y < BEV_ROWS * cell_m)
        & (z >= BEV_Z_MIN_M) & (z <= BEV_Z_MAX_M)
    )
    if not keep.any():
        return BevGrid(grid, cell_m)

    x, y, z = x[keep], y[keep], z[keep]
    pix = points.pixels[keep]
    classes = seg.raster[pix[:, 0], pix[:, 1]].astype(np.int64)
    rows = ORIGIN_ROW - np.floor(y / cell_m).astype(np.int64)
    cols = ORIGIN_COL + np.floor(x / cell_m).astype(np.int64)
    cell_ids = rows * BEV_COLS + cols

    # Sort by cell, then height descending, then class ascending; first of each cell wins
    order = np.lexsort((classes, -z, cell_ids))
    sorted_cells = cell_ids[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_cells[1:] != sorted_cells[:-1]
    winners = order[first]
    grid.flat[cell_ids[winners]] = classes[winners]
    return BevGrid(grid, cell_m)


def obstacle_mask(grid: BevGrid, obstacle_classes=OBSTACLE_CLASSES) -> np.ndarray:
    return np.isin(grid.raster, list(obstacle_classes))
