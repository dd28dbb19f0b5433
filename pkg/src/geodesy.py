"""
Global-to-local coordinate transforms.

GNSS fixes are converted to metric east/north offsets with the equirectangular
approximation over the Earth's equatorial and meridional circumferences, then
rotated into the vehicle frame (x to the right, y forward) using the IMU bearing.
Bearings are compass bearings: degrees clockwise from true north.
"""
import math
from dataclasses import dataclass

import numpy as np

from config.settings import (
    EARTH_EQUATORIAL_CIRCUMFERENCE_M,
    EARTH_MERIDIONAL_CIRCUMFERENCE_M,
    POLAR_LATITUDE_LIMIT_DEG,
)
from src.errors import AntimeridianError, InvalidCoordinateError, PolarRegionError


@dataclass(frozen=True)
class EarthConstants:
    c_equatorial_m: float = EARTH_EQUATORIAL_CIRCUMFERENCE_M
    c_meridional_m: float = EARTH_MERIDIONAL_CIRCUMFERENCE_M


EARTH = EarthConstants()


@dataclass(frozen=True)
class GeoPoint:
    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        if not (math.isfinite(self.lat_deg) and math.isfinite(self.lon_deg)):
            raise InvalidCoordinateError(f"Non-finite coordinate: ({self.lat_deg}, {self.lon_deg})")
        if not -90.0 <= self.lat_deg <= 90.0:
            raise InvalidCoordinateError(f"Latitude out of range: {self.lat_deg}")
        if not -180.0 <= self.lon_deg <= 180.0:
            raise InvalidCoordinateError(f"Longitude out of range: {self.lon_deg}")

    def to_dict(self) -> dict:
        return {"lat": self.lat_deg, "lon": self.lon_deg}


@dataclass(frozen=True)
class Pose:
    position: GeoPoint
    bearing_deg: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.bearing_deg):
            raise InvalidCoordinateError(f"Non-finite bearing: {self.bearing_deg}")
        object.__setattr__(self, "bearing_deg", normalize_bearing(self.bearing_deg))


@dataclass(frozen=True)
class LocalOffset:
    """Metric offset in the local tangent plane: east and north."""
    dx_m: float
    dy_m: float


@dataclass(frozen=True)
class LocalPoint:
    """Point in the vehicle frame: x positive to the right, y positive forward."""
    x_m: float
    y_m: float

    def __post_init__(self):
        if not (math.isfinite(self.x_m) and math.isfinite(self.y_m)):
            raise InvalidCoordinateError(f"Non-finite local point: ({self.x_m}, {self.y_m})")

    def norm(self) -> float:
        return math.hypot(self.x_m, self.y_m)

    def as_list(self) -> list:
        return [self.x_m, self.y_m]


ORIGIN = LocalPoint(0.0, 0.0)


def normalize_bearing(bearing_deg: float) -> float:
    """Wrap a bearing into [0, 360)."""
    wrapped = math.fmod(bearing_deg, 360.0)
    if wrapped < 0.0:
        wrapped += 360.0
    # fmod of a tiny negative number can round up to exactly 360
    return 0.0 if wrapped >= 360.0 else wrapped


def rotation_matrix(theta_deg: float) -> np.ndarray:
    """Counterclockwise rotation matrix R(theta) = [[cos, -sin], [sin, cos]]."""
    theta = math.radians(theta_deg)
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _check_latitude(point: GeoPoint):
    if abs(point.lat_deg) >= POLAR_LATITUDE_LIMIT_DEG:
        raise PolarRegionError(f"Latitude {point.lat_deg} is within {90 - POLAR_LATITUDE_LIMIT_DEG} deg of a pole")


def geo_to_offset(origin: GeoPoint, target: GeoPoint, earth: EarthConstants = EARTH) -> LocalOffset:
    """East/north offset in meters from `origin` to `target`."""
    _check_latitude(origin)
    _check_latitude(target)
    d_lon = target.lon_deg - origin.lon_deg
    if abs(d_lon) > 180.0:
        raise AntimeridianError(f"Longitude difference {d_lon} crosses the antimeridian")
    d_lat = target.lat_deg - origin.lat_deg
    dx = d_lon * earth.c_equatorial_m * math.cos(math.radians(origin.lat_deg)) / 360.0
    dy = d_lat * earth.c_meridional_m / 360.0
    return LocalOffset(dx, dy)


def offset_to_geo(origin: GeoPoint, offset: LocalOffset, earth: EarthConstants = EARTH) -> GeoPoint:
    """Inverse of geo_to_offset: the point reached by moving `offset` from `origin`."""
    _check_latitude(origin)
    lat = origin.lat_deg + offset.dy_m * 360.0 / earth.c_meridional_m
    lon = origin.lon_deg + offset.dx_m * 360.0 / (earth.c_equatorial_m * math.cos(math.radians(origin.lat_deg)))
    return GeoPoint(lat, lon)


def offset_to_vehicle_frame(offset: LocalOffset, bearing_deg: float) -> LocalPoint:
    """Rotate an east/north offset into the vehicle frame.

    The clockwise compass bearing enters the rotation as the counterclockwise
    angle -bearing, so [x, y] = R(-bearing)^T [dx, dy].
    """
    if not (math.isfinite(offset.dx_m) and math.isfinite(offset.dy_m) and math.isfinite(bearing_deg)):
        raise InvalidCoordinateError("Non-finite offset or bearing")
    x, y = rotation_matrix(-bearing_deg).T @ np.array([offset.dx_m, offset.dy_m])
    return LocalPoint(float(x), float(y))


def vehicle_frame_to_offset(point: LocalPoint, bearing_deg: float) -> LocalOffset:
    """Inverse of offset_to_vehicle_frame."""
    dx, dy = rotation_matrix(-bearing_deg) @ np.array([point.x_m, point.y_m])
    return LocalOffset(float(dx), float(dy))


def route_point_to_local(pose: Pose, rp: GeoPoint) -> LocalPoint:
    """Route point in the vehicle frame of `pose`."""
    return offset_to_vehicle_frame(geo_to_offset(pose.position, rp), pose.bearing_deg)


def distance_m(a: GeoPoint, b: GeoPoint) -> float:
    offset = geo_to_offset(a, b)
    return math.hypot(offset.dx_m, offset.dy_m)
