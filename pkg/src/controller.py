"""
Waypoint-to-control translation and the two-agent control policy.

The PID agent turns the first two waypoints into steering and throttle with a
lateral and a longitudinal PID controller; the fusion policy then decides, per
tick, whether the learned (MLP) agent, the PID agent or a weighted blend drives.
"""
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from config.settings import (
    AGENT_MIN_LEVEL,
    DEFAULT_ALPHAS,
    DESIRED_SPEED_GAIN,
    LATERAL_GAINS,
    LONGITUDINAL_GAINS,
    PID_INTEGRAL_LIMIT,
    WHEEL_RADIUS_M,
)
from src.errors import DegenerateAimError, NonPositiveAlphaError
from src.geodesy import LocalPoint
from utils.helpers import log_message

STEERING_RANGE = (-1.0, 1.0)
THROTTLE_RANGE = (0.0, 1.0)


@dataclass(frozen=True)
class Waypoints:
    wp1: LocalPoint
    wp2: LocalPoint
    wp3: LocalPoint

    def as_list(self) -> list:
        return [self.wp1.as_list(), self.wp2.as_list(), self.wp3.as_list()]

    def flat(self) -> np.ndarray:
        """The six coordinates x1, y1, x2, y2, x3, y3."""
        return np.array(self.as_list(), dtype=np.float64).ravel()

    @classmethod
    def from_list(cls, values) -> "Waypoints":
        wp = [LocalPoint(float(x), float(y)) for x, y in values]
        if len(wp) != 3:
            raise ValueError(f"Expected 3 waypoints, got {len(wp)}")
        return cls(*wp)


STOP_WAYPOINTS = Waypoints(LocalPoint(0.0, 0.0), LocalPoint(0.0, 0.0), LocalPoint(0.0, 0.0))


@dataclass(frozen=True)
class WheelFeedback:
    omega_l: float
    omega_r: float
    wheel_radius_m: float = WHEEL_RADIUS_M

    def __post_init__(self):
        if self.wheel_radius_m <= 0:
            raise ValueError("Wheel radius must be positive")
        if self.omega_l < 0 or self.omega_r < 0:
            raise ValueError(f"Wheel speeds must be non-negative, got ({self.omega_l}, {self.omega_r})")


@dataclass(frozen=True)
class Control:
    """Steering in [-1, 1] (positive = right) and throttle in [0, 1]; values are clamped."""
    steering: float = 0.0
    throttle: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.steering) and math.isfinite(self.throttle)):
            raise ValueError(f"Non-finite control: ({self.steering}, {self.throttle})")
        object.__setattr__(self, "steering", float(np.clip(self.steering, *STEERING_RANGE)))
        object.__setattr__(self, "throttle", float(np.clip(self.throttle, *THROTTLE_RANGE)))

    def to_dict(self) -> dict:
        return {"steering": self.steering, "throttle": self.throttle}


STOP = Control(0.0, 0.0)


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float
    integral_limit: float = PID_INTEGRAL_LIMIT

    @classmethod
    def from_tuple(cls, gains: Tuple[float, float, float], integral_limit: float = PID_INTEGRAL_LIMIT) -> "PidGains":
        kp, ki, kd = gains
        return cls(kp, ki, kd, integral_limit)


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0

    def reset(self):
        self.integral = 0.0
        self.prev_error = 0.0


@dataclass(frozen=True)
class ControlWeights:
    beta00: float = 0.5
    beta10: float = 0.5
    beta01: float = 0.5
    beta11: float = 0.5

    def __post_init__(self):
        for name in ("beta00", "beta10", "beta01", "beta11"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if abs(self.beta00 + self.beta10 - 1.0) > 1e-12 or abs(self.beta01 + self.beta11 - 1.0) > 1e-12:
            raise ValueError("Control weights must sum to 1 per row")


# =============================================================================
# Waypoint geometry
# =============================================================================
def aim_point(wp: Waypoints) -> LocalPoint:
    """Midpoint between the first two waypoints."""
    return LocalPoint((wp.wp1.x_m + wp.wp2.x_m) / 2.0, (wp.wp1.y_m + wp.wp2.y_m) / 2.0)


def heading_error_deg(aim: LocalPoint) -> float:
    """Angle of the aim point minus 90 deg: zero dead ahead, negative to the right.

    The result lies in (-270, 90] and is deliberately not wrapped; an aim point
    behind and to the left gives a large negative (rightward) error.
    """
    if aim.norm() < 1e-6:
        raise DegenerateAimError(f"Aim point ({aim.x_m}, {aim.y_m}) is at the vehicle origin")
    return math.degrees(math.atan2(aim.y_m, aim.x_m)) - 90.0


def desired_speed(wp: Waypoints, gain: float = DESIRED_SPEED_GAIN) -> float:
    return gain * math.hypot(wp.wp1.x_m - wp.wp2.x_m, wp.wp1.y_m - wp.wp2.y_m)


def linear_speed(fb: WheelFeedback) -> float:
    return (fb.omega_l + fb.omega_r) / 2.0 * fb.wheel_radius_m


# =============================================================================
# PID
# =============================================================================
def pid_step(state: PidState, gains: PidGains, error: float, dt: float,
             output_range: Optional[Tuple[float, float]] = None) -> float:
    """One discrete PID update; mutates `state`."""
    if dt <= 0:
        raise ValueError(f"PID time step must be positive, got {dt}")
    # trapezoidal integral
    state.integral = float(np.clip(state.integral + 0.5 * (error + state.prev_error) * dt, -gains.integral_limit, gains.integral_limit))
    derivative = (error - state.prev_error) / dt
    state.prev_error = error
    output = gains.kp * error + gains.ki * state.integral + gains.kd * derivative
    if output_range is not None:
        output = float(np.clip(output, *output_range))
    return output


class PidController:
    """
    PID controller with integral windup protection; one instance per episode.
    """
    def __init__(self, gains: PidGains, output_range: Optional[Tuple[float, float]] = None):
        self.gains = gains
        self.output_range = output_range
        self.state = PidState()

    def step(self, error: float, dt: float) -> float:
        return pid_step(self.state, self.gains, error, dt, self.output_range)

    def reset(self):
        self.state.reset()


# =============================================================================
# Fusion policy
# =============================================================================
def weights_from_alphas(alpha1: float, alpha2: float, alpha3: float) -> ControlWeights:
    """Control weights from the waypoint, steering and throttle loss weights."""
    if min(alpha1, alpha2, alpha3) <= 0:
        raise NonPositiveAlphaError(f"Loss weights must be positive, got ({alpha1}, {alpha2}, {alpha3})")
    beta00 = alpha2 / (alpha2 + alpha1)
    beta01 = alpha3 / (alpha3 + alpha1)
    return ControlWeights(beta00, 1.0 - beta00, beta01, 1.0 - beta01)


def fuse(mlp: Control, pid: Control, beta: ControlWeights, min_level: float = AGENT_MIN_LEVEL) -> Control:
    """Combine the two agents' controls; an agent below the minimum throttle cannot drive."""
    mlp_drives = mlp.throttle >= min_level
    pid_drives = pid.throttle >= min_level

    if mlp_drives and pid_drives:
        if abs(mlp.steering) >= min_level and abs(pid.steering) < min_level:
            steering = mlp.steering
        elif abs(mlp.steering) < min_level and abs(pid.steering) >= min_level:
            steering = pid.steering
        else:
            steering = beta.beta00 * mlp.steering + beta.beta10 * pid.steering
        throttle = beta.beta01 * mlp.throttle + beta.beta11 * pid.throttle
        return Control(steering, throttle)
    elif mlp_drives:
        return Control(mlp.steering, mlp.throttle)
    elif pid_drives:
        return Control(pid.steering, pid.throttle)
    else:
        return STOP


@dataclass
class ControllerOutput:
    fused: Control
    mlp: Control
    pid: Control
    heading_error_deg: float
    desired_speed: float
    linear_speed: float


@dataclass
class DualAgentController:
    """
    Runs the PID agent on predicted waypoints and fuses it with the direct control estimate.
    """
    lateral: PidGains = field(default_factory=lambda: PidGains.from_tuple(LATERAL_GAINS))
    longitudinal: PidGains = field(default_factory=lambda: PidGains.from_tuple(LONGITUDINAL_GAINS))
    weights: ControlWeights = field(default_factory=lambda: weights_from_alphas(*DEFAULT_ALPHAS))
    speed_gain: float = DESIRED_SPEED_GAIN
    min_level: float = AGENT_MIN_LEVEL

    def __post_init__(self):
        self._lateral_pid = PidController(self.lateral, STEERING_RANGE)
        self._longitudinal_pid = PidController(self.longitudinal, THROTTLE_RANGE)

    def reset(self):
        self._lateral_pid.reset()
        self._longitudinal_pid.reset()

    def pid_agent(self, wp: Waypoints, fb: WheelFeedback, dt: float) -> Tuple[Control, float, float, float]:
        try:
            theta_err = heading_error_deg(aim_point(wp))
        except DegenerateAimError:
            theta_err = 0.0
        gamma = desired_speed(wp, self.speed_gain)
        nu = linear_speed(fb)
        # Lateral gains are per radian of heading error
        steering = self._lateral_pid.step(math.radians(theta_err), dt)
        throttle = self._longitudinal_pid.step(gamma - nu, dt)
        return Control(steering, throttle), theta_err, gamma, nu

    def act(self, wp: Waypoints, fb: WheelFeedback, mlp: Control, dt: float) -> ControllerOutput:
        pid, theta_err, gamma, nu = self.pid_agent(wp, fb, dt)
        fused = fuse(mlp, pid, self.weights, self.min_level)
        log_message(f"Fused control {fused} from MLP {mlp} and PID {pid}", level="debug")
        return ControllerOutput(fused, mlp, pid, theta_err, gamma, nu)
