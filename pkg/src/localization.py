"""
Pose estimation from GNSS, compass bearing and wheel odometry.

Each tick the previous estimate is propagated with the wheel speeds (same
unicycle arc as the vehicle model) and then corrected toward the GNSS fix and
the bearing reading with a scalar Kalman gain per axis. With zero sensor
noise the gain is 1 and the estimate is the measurement itself.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

from config.settings import BEARING_PROCESS_SIGMA_DEG, POSITION_PROCESS_SIGMA_M, STEP_DT_S, TRACK_WIDTH_M
from src.controller import WheelFeedback, linear_speed
from src.geodesy import GeoPoint, LocalOffset, Pose, geo_to_offset, normalize_bearing, offset_to_geo
from src.vehicle_sim import arc_displacement


def kalman_gain(prior_var: float, measurement_var: float) -> float:
    if measurement_var == 0.0:
        return 1.0
    return prior_var / (prior_var + measurement_var)


def bearing_difference(a_deg: float, b_deg: float) -> float:
    """Signed a - b wrapped to [-180, 180)."""
    return (a_deg - b_deg + 180.0) % 360.0 - 180.0


def odometry_rates(wheels: WheelFeedback, track_width_m: float) -> Tuple[float, float]:
    """Linear speed (m/s) and yaw rate (rad/s, positive clockwise) from the wheel speeds."""
    yaw_rate = (wheels.omega_l - wheels.omega_r) * wheels.wheel_radius_m / track_width_m
    return linear_speed(wheels), yaw_rate


@dataclass
class PoseFilter:
    gnss_sigma_m: float = 0.0
    bearing_sigma_deg: float = 0.0
    track_width_m: float = TRACK_WIDTH_M
    dt: float = STEP_DT_S
    position_process_sigma_m: float = POSITION_PROCESS_SIGMA_M
    bearing_process_sigma_deg: float = BEARING_PROCESS_SIGMA_DEG
    estimate: Optional[Pose] = None
    position_var: float = 0.0
    bearing_var: float = 0.0

    def __post_init__(self):
        if min(self.gnss_sigma_m, self.bearing_sigma_deg, self.position_process_sigma_m,
               self.bearing_process_sigma_deg) < 0:
            raise ValueError("Noise levels must be non-negative")
        if self.track_width_m <= 0 or self.dt <= 0:
            raise ValueError("Track width and time step must be positive")

    def predict(self, wheels: WheelFeedback) -> Pose:
        """Propagate the current estimate over one time step with wheel odometry."""
        v, yaw_rate = odometry_rates(wheels, self.track_width_m)
        east, north, turn_deg = arc_displacement(v, yaw_rate, self.estimate.bearing_deg, self.dt)
        position = self.estimate.position
        if east != 0.0 or north != 0.0:
            position = offset_to_geo(position, LocalOffset(east, north))
        return Pose(position, normalize_bearing(self.estimate.bearing_deg + turn_deg))

    def update(self, gnss: GeoPoint, bearing_deg: float, wheels: WheelFeedback) -> Pose:
        """Fuse one tick of measurements and return the new pose estimate."""
        if self.estimate is None:
            self.estimate = Pose(gnss, bearing_deg)
            self.position_var = self.gnss_sigma_m ** 2
            self.bearing_var = self.bearing_sigma_deg ** 2
            return self.estimate

        prior = self.predict(wheels)
        k_pos = kalman_gain(self.position_var + self.position_process_sigma_m ** 2, self.gnss_sigma_m ** 2)
        k_brg = kalman_gain(self.bearing_var + self.bearing_process_sigma_deg ** 2, self.bearing_sigma_deg ** 2)

        if k_pos == 1.0:
            position = gnss
        else:
            innovation = geo_to_offset(prior.position, gnss)
            position = offset_to_geo(prior.position, LocalOffset(k_pos * innovation.dx_m, k_pos * innovation.dy_m))
        if k_brg == 1.0:
            bearing = bearing_deg
        else:
            bearing = normalize_bearing(prior.bearing_deg + k_brg * bearing_difference(bearing_deg, prior.bearing_deg))

        # posterior variances
        self.position_var = (1.0 - k_pos) * (self.position_var + self.position_process_sigma_m ** 2)
        self.bearing_var = (1.0 - k_brg) * (self.bearing_var + self.bearing_process_sigma_deg ** 2)
        self.estimate = Pose(position, bearing)
        return self.estimate

    def reset(self):
        self.estimate = None
        self.position_var = 0.0
        self.bearing_var = 0.0
