import math
import warnings

import numpy as np
import pytest

from src.bev import CLASS_IDS
from src.controller import STOP, Control, linear_speed
from src.geodesy import Pose, geo_to_offset
from src.vehicle_sim import (
    InterventionCause,
    InterventionEvent,
    InterventionSupervisor,
    SensorNoise,
    VehicleParams,
    VehicleState,
    arc_displacement,
    check_intervention,
    footprint,
    initial_state,
    local_position,
    rollout,
    sense,
    step,
    wheel_speeds,
)
from src.world import build_straight_world

CRUISE = Control(0.0, 0.625)
WALL = CLASS_IDS["wall"]


def state_at(world, x, y, bearing=0.0, v=0.0, yaw_rate=0.0) -> VehicleState:
    return VehicleState(Pose(world.to_geo(x, y), bearing), v, yaw_rate)


def wall_world(y_min, y_max=None, height=2.0):
    wall = {"class_id": WALL, "rect": [-3.0, y_min, 3.0, y_max or y_min + 0.5], "height_m": height}
    return build_straight_world(obstacles=[wall])


# ------------------------------
# Kinematics
# ------------------------------
def test_invalid_params_are_rejected():
    with pytest.raises(ValueError):
        VehicleParams(dt=0.0)
    with pytest.raises(ValueError):
        VehicleParams(track_width_m=-0.5)


def test_stop_from_rest_only_advances_time(empty_world):
    state = initial_state(empty_world)
    after = step(state, STOP)
    assert after.pose == state.pose
    assert (after.v, after.yaw_rate) == (0.0, 0.0)
    assert after.t_s == pytest.approx(0.25)


def test_cruise_throttle_settles_at_cruise_speed(empty_world):
    state = initial_state(empty_world)
    for _ in range(60):
        state = step(state, CRUISE)
    assert state.v == pytest.approx(1.25, abs=1e-9)
    assert state.pose.bearing_deg == 0.0
    position = local_position(empty_world, state)
    assert position.x_m == pytest.approx(0.0, abs=1e-6)
    assert position.y_m > 60 * 0.25 * 1.25 - 2.0


def test_constant_turn_follows_circle():
    # At steady state (v = 1.0, yaw rate = 0.5 rad/s) the path is a circle of radius 2 centered to the right.
    state = VehicleState(Pose(build_straight_world().origin, 0.0), v=1.0, yaw_rate=0.5)
    poses = rollout(0.0, 0.0, state, Control(0.5, 0.5), 10.0)
    radius = 1.0 / 0.5
    for x, y, _ in poses:
        assert math.hypot(x - radius, y) == pytest.approx(radius, abs=1e-9)
    assert poses[-1][2] == pytest.approx(math.degrees(0.5 * 10.0))


def test_straight_arc_displacement():
    east, north, turn = arc_displacement(2.0, 0.0, 90.0, 0.25)
    assert (east, north, turn) == pytest.approx((0.5, 0.0, 0.0), abs=1e-12)


def test_speed_and_bearing_stay_in_range(empty_world):
    rng = np.random.default_rng(2)
    state = initial_state(empty_world)
    for _ in range(200):
        state = step(state, Control(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1))))
        assert 0.0 <= state.v <= 2.0
        assert 0.0 <= state.pose.bearing_deg < 360.0


def test_footprint_is_oriented_rectangle():
    fp = footprint(0.0, 0.0, 90.0)
    min_x, min_y, max_x, max_y = fp.bounds
    assert (max_x - min_x, max_y - min_y) == pytest.approx((1.0, 0.6))
    assert fp.area == pytest.approx(0.6)


# ------------------------------
# Wheel speeds
# ------------------------------
def test_cruise_wheel_speeds(empty_world):
    fb = wheel_speeds(state_at(empty_world, 0.0, 0.0, v=1.25))
    assert fb.omega_l == pytest.approx(8.3333, abs=1e-4)
    assert fb.omega_r == pytest.approx(8.3333, abs=1e-4)


def test_turning_left_spins_right_wheel_faster(empty_world):
    fb = wheel_speeds(state_at(empty_world, 0.0, 0.0, v=0.5, yaw_rate=-1.0))
    assert fb.omega_r > fb.omega_l
    spin = wheel_speeds(state_at(empty_world, 0.0, 0.0, v=0.0, yaw_rate=-1.0))
    assert spin.omega_l == 0.0 and spin.omega_r > 0.0


@pytest.mark.parametrize("v, yaw_rate", [(1.25, 0.0), (1.0, 0.4), (0.7, -1.0)])
def test_wheel_speeds_invert_to_linear_speed(empty_world, v, yaw_rate):
    assert linear_speed(wheel_speeds(state_at(empty_world, 0.0, 0.0, v=v, yaw_rate=yaw_rate))) == pytest.approx(v)


# ------------------------------
# Sensing
# ------------------------------
def test_noiseless_sensing_reports_truth(empty_world, small_intrinsics):
    state = state_at(empty_world, 0.5, 12.0, bearing=10.0, v=1.0)
    obs = sense(empty_world, state, SensorNoise(), SensorNoise().rng(), small_intrinsics)
    assert obs.gnss == state.pose.position
    assert obs.bearing_deg == 10.0
    assert obs.wheels == wheel_speeds(state)


def test_flat_world_depth_matches_ground_plane(empty_world, small_intrinsics):
    obs = sense(empty_world, state_at(empty_world, 0.0, 5.0), SensorNoise(), SensorNoise().rng(), small_intrinsics)
    X, Y = small_intrinsics.ray_grid()
    with np.errstate(divide="ignore"):
        expected = np.where(Y > 0, small_intrinsics.cam_height_m / Y, np.inf)
    in_range = expected * np.sqrt(1.0 + X ** 2 + Y ** 2) < 49.0
    assert in_range.any()
    np.testing.assert_allclose(obs.depth.raster[in_range], expected[in_range], atol=1e-4)
    assert np.isinf(obs.depth.raster[Y <= 0]).all()
    assert (obs.seg.raster[Y <= 0] == CLASS_IDS["sky"]).all()


def test_wall_ahead_appears_in_expected_rows(small_intrinsics):
    world = wall_world(5.0)
    obs = sense(world, initial_state(world), SensorNoise(), SensorNoise().rng(), small_intrinsics)
    # Rows whose center ray meets the 2 m wall 5 m ahead: z = 0.9 - 5 * (v - 32) / 64 in [0, 2]
    column = small_intrinsics.width // 2
    assert (obs.seg.raster[20:42, column] == WALL).all()
    np.testing.assert_allclose(obs.depth.raster[20:42, column], 5.0, atol=1e-9)
    assert obs.seg.raster[10, column] == CLASS_IDS["sky"]
    assert obs.seg.raster[60, column] == CLASS_IDS["road"]


def test_rendering_raises_no_floating_point_warnings(car_world, small_intrinsics):
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        obs = sense(car_world, state_at(car_world, 0.0, 40.0), SensorNoise(), SensorNoise().rng(), small_intrinsics)
    assert np.isinf(obs.depth.raster).any()
    assert (obs.seg.raster == CLASS_IDS["car"]).any()


def test_sensing_is_deterministic_under_seed(car_world, small_intrinsics):
    noise = SensorNoise(gnss_sigma_m=1.0, bearing_sigma_deg=2.0, depth_relative_sigma=0.05, seed=9)
    state = state_at(car_world, 0.0, 10.0, v=1.0)
    a = sense(car_world, state, noise, noise.rng(), small_intrinsics)
    b = sense(car_world, state, noise, noise.rng(), small_intrinsics)
    assert a.gnss == b.gnss and a.bearing_deg == b.bearing_deg
    np.testing.assert_array_equal(a.depth.raster, b.depth.raster)


def test_gnss_noise_is_in_meters(empty_world, small_intrinsics):
    noise = SensorNoise(gnss_sigma_m=1.0, seed=4)
    rng = noise.rng()
    state = state_at(empty_world, 0.0, 10.0)
    errors = []
    for _ in range(200):
        offset = geo_to_offset(state.pose.position, sense(empty_world, state, noise, rng, small_intrinsics).gnss)
        errors.extend([offset.dx_m, offset.dy_m])
    assert np.std(errors) == pytest.approx(1.0, rel=0.15)


def test_negative_noise_is_rejected():
    with pytest.raises(ValueError):
        SensorNoise(gnss_sigma_m=-1.0)


# ------------------------------
# Interventions
# ------------------------------
def test_free_path_needs_no_intervention(empty_world):
    assert check_intervention(empty_world, state_at(empty_world, 0.0, 0.0, v=1.25), CRUISE) is None


def test_wall_ahead_starts_intervention():
    world = wall_world(1.5)
    event = check_intervention(world, state_at(world, 0.0, 0.0, v=1.25), CRUISE, tick=7)
    assert event == InterventionEvent(7, 7, InterventionCause.PREDICTED_COLLISION)


def test_stopped_on_centerline_needs_no_intervention(empty_world):
    assert check_intervention(empty_world, state_at(empty_world, 0.0, 20.0), STOP) is None


def test_far_from_route_is_off_route(empty_world):
    event = check_intervention(empty_world, state_at(empty_world, 6.0, 20.0), STOP)
    assert event.cause is InterventionCause.OFF_ROUTE


def test_event_duration_counts_ticks():
    event = InterventionEvent(4, 9, InterventionCause.OFF_ROUTE)
    assert event.duration_s(0.25) == pytest.approx(1.5)
    assert event.to_dict() == {"start_tick": 4, "end_tick": 9, "cause": "OffRoute"}
    with pytest.raises(ValueError):
        InterventionEvent(5, 4, InterventionCause.OFF_ROUTE)


def test_supervisor_stops_before_blocking_building(blocked_world):
    supervisor = InterventionSupervisor(blocked_world)
    params = supervisor.params
    state = initial_state(blocked_world)
    ticks = 160
    for tick in range(ticks):
        control, _ = supervisor.update(state, CRUISE, tick)
        state = step(state, control, params)
        position = local_position(blocked_world, state)
        assert not blocked_world.hits_obstacle(footprint(position.x_m, position.y_m, state.pose.bearing_deg, params))
    events = supervisor.finish(ticks - 1)
    assert len(events) == 1
    assert events[0].cause is InterventionCause.PREDICTED_COLLISION
    assert events[0].end_tick == ticks - 1
    assert position.y_m < 30.0


def test_supervisor_events_never_overlap(empty_world):
    # Drift off the road with a constant right turn; the supervisor keeps bringing the vehicle back.
    supervisor = InterventionSupervisor(empty_world)
    state = initial_state(empty_world)
    ticks = 240
    for tick in range(ticks):
        control, _ = supervisor.update(state, Control(0.3, 0.5), tick)
        state = step(state, control, supervisor.params)
    events = supervisor.finish(ticks - 1)
    assert events
    for a, b in zip(events, events[1:]):
        assert a.end_tick < b.start_tick
    assert sum(e.duration_s(0.25) for e in events) <= ticks * 0.25
