"""
Closed-loop differential-drive vehicle.

Steering and throttle command a yaw rate and a linear speed through a
first-order actuator lag; the pose is integrated with exact unicycle arcs.
Yaw rate is positive clockwise so that it adds directly to the compass bearing.
The module also renders noisy observations and runs the automatic
intervention supervisor that stands in for a safety driver.
"""
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from shapely.geometry import Polygon

from config.settings import (
    ACTUATOR_LAG_S,
    FOOTPRINT_LENGTH_M,
    FOOTPRINT_WIDTH_M,
    INTERVENTION_HORIZON_S,
    OFF_ROUTE_LIMIT_M,
    REJOIN_DISTANCE_M,
    STEP_DT_S,
    SUPERVISOR_LOOKAHEAD_M,
    SUPERVISOR_SPEED_MPS,
    TRACK_WIDTH_M,
    V_MAX_MPS,
    WHEEL_RADIUS_M,
    YAW_RATE_MAX_RPS,
)
from src.bev import CameraIntrinsics, DepthMap, SegMap
from src.controller import STOP, Control, WheelFeedback
from src.geodesy import GeoPoint, LocalOffset, LocalPoint, Pose, normalize_bearing, offset_to_geo, offset_to_vehicle_frame
from src.world import World
from utils.helpers import log_message


@dataclass(frozen=True)
class VehicleParams:
    wheel_radius_m: float = WHEEL_RADIUS_M
    track_width_m: float = TRACK_WIDTH_M
    v_max: float = V_MAX_MPS
    yaw_rate_max: float = YAW_RATE_MAX_RPS
    dt: float = STEP_DT_S
    lag_s: float = ACTUATOR_LAG_S
    footprint_length_m: float = FOOTPRINT_LENGTH_M
    footprint_width_m: float = FOOTPRINT_WIDTH_M

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"Vehicle parameter {name} must be positive, got {value}")

    @property
    def lag_factor(self) -> float:
        """Fraction of the gap to the commanded value closed in one step."""
        return 1.0 - math.exp(-self.dt / self.lag_s)


@dataclass(frozen=True)
class VehicleState:
    pose: Pose
    v: float = 0.0
    yaw_rate: float = 0.0  # rad/s, positive clockwise
    t_s: float = 0.0


@dataclass(frozen=True)
class SensorNoise:
    gnss_sigma_m: float = 0.0
    bearing_sigma_deg: float = 0.0
    depth_relative_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.gnss_sigma_m, self.bearing_sigma_deg, self.depth_relative_sigma) < 0:
            raise ValueError("Noise standard deviations must be non-negative")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class ObservationSet:
    t_s: float
    gnss: GeoPoint
    bearing_deg: float
    wheels: WheelFeedback
    depth: DepthMap
    seg: SegMap

    @property
    def pose(self) -> Pose:
        return Pose(self.gnss, self.bearing_deg)


class InterventionCause(str, Enum):
    PREDICTED_COLLISION = "PredictedCollision"
    OFF_ROUTE = "OffRoute"


@dataclass(frozen=True)
class InterventionEvent:
    start_tick: int
    end_tick: int
    cause: InterventionCause

    def __post_init__(self):
        if self.end_tick < self.start_tick:
            raise ValueError(f"Intervention ends ({self.end_tick}) before it starts ({self.start_tick})")

    def duration_s(self, dt: float = STEP_DT_S) -> float:
        return (self.end_tick - self.start_tick + 1) * dt

    def to_dict(self) -> dict:
        return {"start_tick": self.start_tick, "end_tick": self.end_tick, "cause": self.cause.value}


# =============================================================================
# Kinematics
# =============================================================================
def _lagged(v: float, yaw_rate: float, control: Control, params: VehicleParams) -> Tuple[float, float]:
    a = params.lag_factor
    v_cmd = control.throttle * params.v_max
    w_cmd = control.steering * params.yaw_rate_max
    v_new = float(np.clip(v + a * (v_cmd - v), 0.0, params.v_max))
    return v_new, yaw_rate + a * (w_cmd - yaw_rate)


def arc_displacement(v: float, yaw_rate: float, bearing_deg: float, dt: float) -> Tuple[float, float, float]:
    """East/north displacement and bearing change (deg) of a unicycle arc."""
    b0 = math.radians(bearing_deg)
    turn = yaw_rate * dt
    if abs(yaw_rate) < 1e-9:
        return v * dt * math.sin(b0), v * dt * math.cos(b0), 0.0
    radius = v / yaw_rate
    east = radius * (math.cos(b0) - math.cos(b0 + turn))
    north = radius * (math.sin(b0 + turn) - math.sin(b0))
    return east, north, math.degrees(turn)


def step(state: VehicleState, control: Control, params: VehicleParams = VehicleParams()) -> VehicleState:
    """Advance the vehicle by one time step under `control`."""
    v, yaw_rate = _lagged(state.v, state.yaw_rate, control, params)
    east, north, turn_deg = arc_displacement(v, yaw_rate, state.pose.bearing_deg, params.dt)
    position = state.pose.position
    if east != 0.0 or north != 0.0:
        position = offset_to_geo(position, LocalOffset(east, north))
    bearing = normalize_bearing(state.pose.bearing_deg + turn_deg)
    return VehicleState(Pose(position, bearing), v, yaw_rate, state.t_s + params.dt)


def wheel_speeds(state: VehicleState, params: VehicleParams = VehicleParams()) -> WheelFeedback:
    half_turn = state.yaw_rate * params.track_width_m / 2.0
    omega_l = max((state.v + half_turn) / params.wheel_radius_m, 0.0)
    omega_r = max((state.v - half_turn) / params.wheel_radius_m, 0.0)
    return WheelFeedback(omega_l, omega_r, params.wheel_radius_m)


def footprint(x_m: float, y_m: float, bearing_deg: float, params: VehicleParams = VehicleParams()) -> Polygon:
    """Vehicle rectangle in the world frame, centered on the vehicle position."""
    b = math.radians(bearing_deg)
    forward = np.array([math.sin(b), math.cos(b)]) * params.footprint_length_m / 2.0
    right = np.array([math.cos(b), -math.sin(b)]) * params.footprint_width_m / 2.0
    center = np.array([x_m, y_m])
    corners = [center + forward + right, center - forward + right, center - forward - right, center + forward - right]
    return Polygon(corners)


def rollout(x_m: float, y_m: float, state: VehicleState, control: Control, horizon_s: float,
            params: VehicleParams = VehicleParams()) -> List[Tuple[float, float, float]]:
    """World-frame (x, y, bearing) poses reached by holding `control` for `horizon_s`, starting pose included."""
    poses = [(x_m, y_m, state.pose.bearing_deg)]
    v, yaw_rate, bearing = state.v, state.yaw_rate, state.pose.bearing_deg
    for _ in range(int(round(horizon_s / params.dt))):
        v, yaw_rate = _lagged(v, yaw_rate, control, params)
        east, north, turn_deg = arc_displacement(v, yaw_rate, bearing, params.dt)
        x_m, y_m, bearing = x_m + east, y_m + north, bearing + turn_deg
        poses.append((x_m, y_m, bearing))
    return poses


def rollout_collides(world: World, state: VehicleState, control: Control, horizon_s: float,
                     params: VehicleParams = VehicleParams()) -> bool:
    x, y = world.to_local(state.pose.position)
    return any(world.hits_obstacle(footprint(px, py, pb, params))
               for px, py, pb in rollout(x, y, state, control, horizon_s, params))


# =============================================================================
# Sensing
# =============================================================================
def sense(world: World, state: VehicleState, noise: SensorNoise, rng: np.random.Generator,
          intr: CameraIntrinsics = CameraIntrinsics(), params: VehicleParams = VehicleParams()) -> ObservationSet:
    """Render depth and segmentation at the true pose and add measurement noise.

    Random draws happen in a fixed order (GNSS, bearing, depth) on every call.
    """
    x, y = world.to_local(state.pose.position)
    depth, seg = world.render(float(x), float(y), state.pose.bearing_deg, intr)

    gnss_noise = rng.normal(0.0, 1.0, size=2) * noise.gnss_sigma_m
    bearing_noise = float(rng.normal(0.0, 1.0)) * noise.bearing_sigma_deg
    depth_noise = rng.normal(0.0, 1.0, size=depth.shape) * noise.depth_relative_sigma

    gnss = state.pose.position
    if noise.gnss_sigma_m > 0:
        gnss = offset_to_geo(gnss, LocalOffset(float(gnss_noise[0]), float(gnss_noise[1])))
    with np.errstate(invalid="ignore"):
        noisy_depth = depth * (1.0 + depth_noise) if noise.depth_relative_sigma > 0 else depth

    return ObservationSet(
        t_s=state.t_s,
        gnss=gnss,
        bearing_deg=normalize_bearing(state.pose.bearing_deg + bearing_noise),
        wheels=wheel_speeds(state, params),
        depth=DepthMap(noisy_depth),
        seg=SegMap(seg),
    )


# =============================================================================
# Interventions
# =============================================================================
def check_intervention(world: World, state: VehicleState, control: Control, params: VehicleParams = VehicleParams(),
                       horizon_s: float = INTERVENTION_HORIZON_S, off_route_m: float = OFF_ROUTE_LIMIT_M,
                       tick: int = 0) -> Optional[InterventionEvent]:
    """An intervention starting at `tick` if holding `control` collides within the horizon or the vehicle is off route."""
    x, y = world.to_local(state.pose.position)
    if rollout_collides(world, state, control, horizon_s, params):
        return InterventionEvent(tick, tick, InterventionCause.PREDICTED_COLLISION)
    if world.cross_track_m(float(x), float(y)) > off_route_m:
        return InterventionEvent(tick, tick, InterventionCause.OFF_ROUTE)
    return None


@dataclass
class InterventionSupervisor:
    """
    Watches the autonomous control each tick and takes over when it would collide
    or has left the route, steering back to the route centerline.
    """
    world: World
    params: VehicleParams = field(default_factory=VehicleParams)
    horizon_s: float = INTERVENTION_HORIZON_S
    off_route_m: float = OFF_ROUTE_LIMIT_M
    rejoin_m: float = REJOIN_DISTANCE_M
    speed_mps: float = SUPERVISOR_SPEED_MPS
    lookahead_m: float = SUPERVISOR_LOOKAHEAD_M
    events: List[InterventionEvent] = field(default_factory=list)
    active: Optional[InterventionEvent] = None

    def supervisor_control(self, state: VehicleState) -> Control:
        """Pure pursuit toward a point on the route ahead; stop if even that would collide."""
        x, y = self.world.to_local(state.pose.position)
        target = self.world.route_lookahead(float(x), float(y), self.lookahead_m)
        local = offset_to_vehicle_frame(LocalOffset(float(target[0] - x), float(target[1] - y)), state.pose.bearing_deg)
        dist_sq = local.x_m ** 2 + local.y_m ** 2
        curvature = 2.0 * local.x_m / dist_sq if dist_sq > 1e-12 else 0.0
        control = Control(self.speed_mps * curvature / self.params.yaw_rate_max, self.speed_mps / self.params.v_max)
        if rollout_collides(self.world, state, control, self.horizon_s, self.params):
            return STOP
        return control

    def _can_release(self, state: VehicleState, autonomous: Control) -> bool:
        x, y = self.world.to_local(state.pose.position)
        return (self.world.cross_track_m(float(x), float(y)) <= self.rejoin_m
                and not rollout_collides(self.world, state, autonomous, self.horizon_s, self.params))

    def update(self, state: VehicleState, autonomous: Control, tick: int) -> Tuple[Control, bool]:
        """Control to apply this tick and whether the supervisor is driving."""
        if self.active is not None and self._can_release(state, autonomous):
            self._close(tick - 1)
        if self.active is None:
            self.active = check_intervention(self.world, state, autonomous, self.params,
                                             self.horizon_s, self.off_route_m, tick)
            if self.active is not None:
                log_message(f"Intervention {len(self.events)} started at tick {tick}: {self.active.cause.value}")
        if self.active is None:
            return autonomous, False
        self.active = replace(self.active, end_tick=tick)
        return self.supervisor_control(state), True

    def _close(self, end_tick: int):
        event = replace(self.active, end_tick=max(end_tick, self.active.start_tick))
        self.events.append(event)
        self.active = None
        log_message(f"Intervention ended at tick {event.end_tick} after {event.duration_s(self.params.dt):.2f} s")

    def finish(self, last_tick: int) -> List[InterventionEvent]:
        """Close any open event on the last tick and return all events."""
        if self.active is not None:
            self._close(last_tick)
        return list(self.events)

    @property
    def current_event_id(self) -> Optional[int]:
        return len(self.events) if self.active is not None else None


def initial_state(world: World) -> VehicleState:
    return VehicleState(world.start_pose)


def local_position(world: World, state: VehicleState) -> LocalPoint:
    x, y = world.to_local(state.pose.position)
    return LocalPoint(float(x), float(y))
