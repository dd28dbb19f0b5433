import logging

import numpy as np
import pytest

from src.errors import FusionNavError, RouteError
from src.formats import read_route_file
from src.geodesy import GeoPoint, LocalOffset, LocalPoint, Pose, offset_to_geo
from src.route import (
    NavCommand,
    Route,
    RouteTracker,
    RouteWindow,
    advance,
    command,
    cross_track_distance,
    straight_route,
    window,
)

ORIGIN = GeoPoint(34.70, 137.41)


def brute_force_command(x1, x2):
    if x1 <= -4 or x2 <= -8:
        return NavCommand.TURN_LEFT
    if x1 >= 4 or x2 >= 8:
        return NavCommand.TURN_RIGHT
    return NavCommand.GO_STRAIGHT


def at(east, north, bearing=0.0) -> Pose:
    return Pose(offset_to_geo(ORIGIN, LocalOffset(east, north)), bearing)


@pytest.fixture
def route():
    return straight_route(ORIGIN, 0.0, 36.0, 12.0)


# ------------------------------
# Route
# ------------------------------
def test_route_needs_two_points():
    with pytest.raises(RouteError):
        Route((ORIGIN,))


def test_route_errors_belong_to_the_package_hierarchy():
    with pytest.raises(FusionNavError):
        Route(())
    assert issubclass(RouteError, ValueError)


def test_unusual_spacing_is_logged(caplog):
    with caplog.at_level(logging.WARNING):
        Route((ORIGIN, offset_to_geo(ORIGIN, LocalOffset(0.0, 30.0))))
    assert "apart" in caplog.text


def test_route_file_round_trip(tmp_path, route):
    path = tmp_path / "route.json"
    route.to_file(path)
    loaded = Route.from_file(path)
    assert len(loaded) == len(route)
    for a, b in zip(loaded.points, route.points):
        assert a.lat_deg == pytest.approx(b.lat_deg, abs=1e-9)
        assert a.lon_deg == pytest.approx(b.lon_deg, abs=1e-9)
    assert len(read_route_file(path)) == 4


def test_polyline_is_in_east_north_meters(route):
    polyline = route.polyline_m(ORIGIN)
    np.testing.assert_allclose(polyline[:, 0], 0.0, atol=1e-6)
    np.testing.assert_allclose(polyline[:, 1], [0.0, 12.0, 24.0, 36.0], atol=1e-6)


def test_cross_track_distance():
    polyline = np.array([[0.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
    assert cross_track_distance(polyline, 2.0, 5.0) == pytest.approx(2.0)
    assert cross_track_distance(polyline, 5.0, 12.0) == pytest.approx(2.0)
    assert cross_track_distance(polyline, 0.0, -3.0) == pytest.approx(3.0)


# ------------------------------
# advance
# ------------------------------
def test_far_from_current_point_keeps_index(route):
    tracker = RouteTracker(route, current_index=1)
    updated, finished = advance(tracker, at(0.0, 2.0))
    assert updated.current_index == 1 and not finished


def test_within_switch_radius_moves_to_next_point(route):
    tracker = RouteTracker(route, current_index=1)
    updated, finished = advance(tracker, at(0.0, 12.0 - 3.9))
    assert updated.current_index == 2 and not finished


def test_final_point_finishes(route):
    tracker = RouteTracker(route, current_index=3)
    updated, finished = advance(tracker, at(0.5, 35.0))
    assert finished
    assert updated.current_index == 3


def test_several_switches_in_one_tick():
    route = Route(tuple(offset_to_geo(ORIGIN, LocalOffset(0.0, 6.0 * i)) for i in range(4)))
    tracker = RouteTracker(route, current_index=1, switch_radius_m=7.0)
    updated, finished = advance(tracker, at(0.0, 9.0))
    assert updated.current_index == 3 and not finished


def test_index_never_decreases(route):
    tracker = RouteTracker.start(route)
    for north in np.linspace(0.0, 40.0, 81):
        updated, _ = advance(tracker, at(0.0, float(north)))
        assert updated.current_index >= tracker.current_index
        tracker = updated


def test_invalid_tracker_is_rejected(route):
    with pytest.raises(RouteError):
        RouteTracker(route, current_index=4)
    with pytest.raises(RouteError):
        RouteTracker(route, switch_radius_m=0.0)


# ------------------------------
# window
# ------------------------------
def test_window_on_straight_route(route):
    win = window(RouteTracker(route, current_index=1), at(0.0, 2.0))
    assert win.rp1.x_m == pytest.approx(0.0, abs=1e-6)
    assert win.rp1.y_m == pytest.approx(10.0, abs=1e-6)
    assert win.rp2.y_m == pytest.approx(22.0, abs=1e-6)
    assert win.rp2.y_m > win.rp1.y_m


def test_window_duplicates_last_point(route):
    win = window(RouteTracker(route, current_index=3), at(0.0, 30.0))
    assert win.rp1 == win.rp2


def test_facing_east_puts_route_to_the_left(route):
    win = window(RouteTracker(route, current_index=1), at(0.0, 0.0, bearing=90.0))
    assert win.rp1.x_m == pytest.approx(-12.0, abs=1e-6)
    assert win.rp1.y_m == pytest.approx(0.0, abs=1e-6)


# ------------------------------
# command
# ------------------------------
@pytest.mark.parametrize("x1, x2, expected", [
    (-5.0, 0.0, NavCommand.TURN_LEFT),
    (0.0, 9.0, NavCommand.TURN_RIGHT),
    (3.9, 7.9, NavCommand.GO_STRAIGHT),
    (-5.0, 9.0, NavCommand.TURN_LEFT),
])
def test_command_examples(x1, x2, expected):
    assert command(RouteWindow(LocalPoint(x1, 10.0), LocalPoint(x2, 20.0))) is expected


def test_command_matches_brute_force_over_grid():
    values = np.arange(-10.0, 10.0 + 1e-9, 0.5)
    for x1 in values:
        for x2 in values:
            win = RouteWindow(LocalPoint(float(x1), 12.0), LocalPoint(float(x2), 24.0))
            assert command(win) is brute_force_command(x1, x2)


def test_command_values_are_record_strings():
    assert [c.value for c in NavCommand] == ["TurnLeft", "TurnRight", "GoStraight"]
