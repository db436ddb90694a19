import math

import pytest

from crossim.autopilot import (
    GO,
    WAIT,
    Approaching,
    GapAcceptanceParams,
    available_gap,
    control,
    decide,
)
from crossim.experiment import (
    SCENARIO_B,
    TrialParams,
    TrialSpec,
    make_autopilot_controller,
    run_trial,
)

P = GapAcceptanceParams()


def test_gap_above_critical_goes():
    assert decide([Approaching(distance=7.0 * 10.0, speed=10.0)], None, P) == GO


def test_gap_below_critical_waits():
    assert decide([Approaching(distance=3.0 * 10.0, speed=10.0)], None, P) == WAIT


def test_tie_resolves_to_go():
    assert decide([Approaching(distance=4.8 * 10.0, speed=10.0)], None, P) == GO


def test_stationary_vehicle_means_infinite_gap():
    assert available_gap([Approaching(distance=5.0, speed=0.0)]) == math.inf
    assert decide([Approaching(distance=5.0, speed=0.0)], None, P) == GO


def test_no_traffic_goes():
    assert decide([], None, P) == GO


def test_nearest_vehicle_defines_the_gap():
    vehicles = [
        Approaching(distance=100.0, speed=10.0),
        Approaching(distance=30.0, speed=10.0),
    ]
    assert available_gap(vehicles) == pytest.approx(3.0)


def test_compliant_agent_waits_on_red_even_with_gap():
    assert decide([], "vehicle_green", P) == WAIT
    assert decide([], "clearance", P) == WAIT
    assert decide([], "walk_green", P) == GO


def test_jaywalker_crosses_on_red_above_threshold():
    jay = GapAcceptanceParams(signal_compliant=False, jaywalk_threshold=6.0)
    far = [Approaching(distance=100.0, speed=10.0)]
    near = [Approaching(distance=50.0, speed=10.0)]
    assert decide(far, "vehicle_green", jay) == GO
    assert decide(near, "vehicle_green", jay) == WAIT


def test_decide_is_pure():
    vehicles = [Approaching(distance=60.0, speed=10.0)]
    assert all(decide(vehicles, None, P) == decide(vehicles, None, P) for _ in range(5))


def test_control_go_walks_toward_exit():
    v = control((0.0, 0.0), GO, (0.0, 0.0), (0.0, 7.0), P)
    assert v == (pytest.approx(0.0, abs=1e-12), pytest.approx(1.4))


def test_control_wait_is_zero_at_anchor():
    assert control((0.0, 0.0), WAIT, (0.0, 0.0), (0.0, 7.0), P) == (0.0, 0.0)
    assert control((0.1, 0.05), WAIT, (0.0, 0.0), (0.0, 7.0), P) == (0.0, 0.0)


def test_control_wait_walks_back_when_displaced():
    v = control((1.0, 0.0), WAIT, (0.0, 0.0), (0.0, 7.0), P)
    assert v[0] == pytest.approx(-1.4)


def test_walk_speed_clamped_to_cap():
    fast = GapAcceptanceParams(walk_speed=3.0)
    v = control((0.0, 0.0), GO, (0.0, 0.0), (0.0, 7.0), fast, v_max=2.0)
    assert math.hypot(*v) == pytest.approx(2.0)


def test_param_validation():
    with pytest.raises(ValueError):
        GapAcceptanceParams(critical_gap=0.0)
    with pytest.raises(ValueError):
        GapAcceptanceParams(walk_speed=-1.0)


def _uniform_spec(headway: float, horizon: float, gap_positions=(5, 10)) -> TrialSpec:
    """Hand-built schedule: constant sub-critical headways over the whole
    horizon with the two safe gaps inserted."""
    headways = [headway] * (int(horizon / headway) + 4)
    for where, value in zip(gap_positions, (5.0, 7.0)):
        headways[where] = value
    arrivals = []
    total = 0.0
    for h in headways:
        total += h
        if total < horizon:
            arrivals.append(total)
    return TrialSpec(
        trial_index=0,
        scenario=SCENARIO_B,
        arrival_times=(tuple(arrivals),),
        gap_insertion_indices=gap_positions,
        seed=0,
    )


def test_demanding_critical_gap_times_out(scene):
    # no natural gap reaches 8 s: the autopilot waits through both inserted
    # gaps (7 < 8) and the trial times out
    spec = _uniform_spec(headway=3.5, horizon=80.0)
    params = TrialParams(seed=0, horizon=80.0)
    ctl = make_autopilot_controller(GapAcceptanceParams(critical_gap=8.0))
    outcome, log = run_trial(spec, scene, ctl, params=params, record="events")
    assert outcome.result == "timeout"
    # it never stepped out while traffic was still scheduled: every gap,
    # inserted ones included, stayed under the critical threshold
    last_arrival = max(spec.arrival_times[0])
    for ev in log.events:
        if ev.kind == "crossing_started":
            assert ev.t > last_arrival


def test_modest_critical_gap_crosses_one_of_the_safe_gaps(scene):
    spec = _uniform_spec(headway=3.5, horizon=80.0)
    params = TrialParams(seed=0, horizon=80.0)
    ctl = make_autopilot_controller(GapAcceptanceParams(critical_gap=4.8))
    outcome, log = run_trial(spec, scene, ctl, params=params, record="events")
    assert outcome.result == "crossed"
    assert outcome.accepted_gap in (pytest.approx(5.0), pytest.approx(7.0))
