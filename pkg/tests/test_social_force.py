import math

import pytest

from crossim.social_force import (
    CYCLIST_FORCE_PARAMS,
    PEDESTRIAN_RADIUS,
    ForceSource,
    SocialForceParams,
    nearest_point_on_rect,
    obstacle_sources,
    social_force,
)

P = SocialForceParams()


def test_moving_at_desired_velocity_gives_zero_force():
    f = social_force((0.0, 0.0), (1.34, 0.0), (10.0, 0.0), 1.34, [], P)
    assert f == pytest.approx((0.0, 0.0), abs=1e-12)


def test_at_rest_driving_term_points_at_goal_with_v0_over_tau():
    f = social_force((0.0, 0.0), (0.0, 0.0), (5.0, 0.0), 1.34, [], P)
    assert f[0] == pytest.approx(1.34 / P.tau)
    assert f[1] == pytest.approx(0.0, abs=1e-15)


def test_goal_at_current_position_damps_velocity():
    f = social_force((1.0, 1.0), (0.7, -0.2), (1.0, 1.0), 1.34, [], P)
    assert f[0] == pytest.approx(-0.7 / P.tau)
    assert f[1] == pytest.approx(0.2 / P.tau)


def test_mirror_symmetric_neighbors_cancel_exactly():
    sources = [
        ForceSource(kind="pedestrian", position=(1.0, 0.8)),
        ForceSource(kind="pedestrian", position=(1.0, -0.8)),
    ]
    f = social_force((0.0, 0.0), (0.0, 0.0), (5.0, 0.0), 1.34, sources, P)
    assert f[1] == 0.0  # exact cancellation, not approximate


def test_single_neighbor_magnitude_matches_formula():
    d = 1.3
    f = social_force((0.0, 0.0), (0.0, 0.0), None, 0.0, [ForceSource("pedestrian", (d, 0.0))], P)
    r = 2.0 * PEDESTRIAN_RADIUS
    want = P.strength["pedestrian"] * math.exp((r - d) / P.reach["pedestrian"])
    assert f[0] == pytest.approx(-want)
    assert f[1] == pytest.approx(0.0, abs=1e-15)


def test_repulsion_per_source_kind_uses_that_kinds_constants():
    d = 2.0
    for kind, radius_term in (("obstacle", PEDESTRIAN_RADIUS), ("cyclist", PEDESTRIAN_RADIUS + 0.3)):
        f = social_force((0.0, 0.0), (0.0, 0.0), None, 0.0, [ForceSource(kind, (d, 0.0))], P)
        want = P.strength[kind] * math.exp((radius_term - d) / P.reach[kind])
        assert f[0] == pytest.approx(-want), kind


def test_vehicle_repels_from_nearest_rectangle_point():
    # vehicle heading +x at origin: the near side is at y = 0.9
    src = ForceSource(kind="vehicle", position=(0.0, 0.0), heading=0.0)
    ped = (0.0, 2.0)
    f = social_force(ped, (0.0, 0.0), None, 0.0, [src], P)
    d = 2.0 - 0.9
    want = P.strength["vehicle"] * math.exp((PEDESTRIAN_RADIUS - d) / P.reach["vehicle"])
    assert f[1] == pytest.approx(want)
    assert f[0] == pytest.approx(0.0, abs=1e-12)


def test_nearest_point_on_rotated_rect():
    # rectangle heading +y: length runs along y
    q = nearest_point_on_rect((3.0, 0.0), (0.0, 0.0), math.pi / 2.0, 2.25, 0.9)
    assert q == (pytest.approx(0.9), pytest.approx(0.0, abs=1e-12))


def test_obstacle_sources_pick_nearest_boundary_point():
    square = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]
    srcs = obstacle_sources((2.0, -1.0), [square])
    assert len(srcs) == 1
    assert srcs[0].position == (pytest.approx(2.0), pytest.approx(0.0))


def test_force_is_finite_even_when_overlapping():
    f = social_force((0.0, 0.0), (0.0, 0.0), None, 0.0, [ForceSource("pedestrian", (0.0, 0.0))], P)
    assert math.isfinite(f[0]) and math.isfinite(f[1])


def test_cyclist_params_have_higher_cap():
    assert CYCLIST_FORCE_PARAMS.v_max == 8.0
    assert CYCLIST_FORCE_PARAMS.v_max >= 4.2


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        SocialForceParams(tau=0.0)
    with pytest.raises(ValueError):
        SocialForceParams(strength={"pedestrian": -1.0})
