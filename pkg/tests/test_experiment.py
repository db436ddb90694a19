import math

import numpy as np
import pytest
from scipy import stats

from crossim import experiment as ex
from crossim.autopilot import GapAcceptanceParams
from crossim.experiment import (
    SCENARIO_A,
    SCENARIO_B,
    RespondentProfile,
    Session,
    TrialAbort,
    TrialGenerationError,
    TrialParams,
    build_session,
    gap_openings,
    generate_trial,
    make_autopilot_controller,
    realized_arrivals,
    record_preference,
    run_trial,
)

PARAMS = TrialParams(seed=42)
PROFILE = RespondentProfile(id=1, age=26, female=0, primary_mode="bike", city="Montreal", hmd_experience=0)


def test_generate_trial_is_deterministic():
    a = generate_trial(PARAMS, 3)
    b = generate_trial(PARAMS, 3)
    assert a == b
    assert generate_trial(PARAMS, 4) != a


def test_every_trial_has_exactly_one_5s_and_one_7s_headway():
    for idx in range(10):
        spec = generate_trial(PARAMS, idx)
        headways = spec.headways()
        i5, i7 = spec.gap_insertion_indices
        assert sorted((headways[i5], headways[i7])) == [5.0, 7.0]  # exact
        assert sum(1 for h in headways if h == 5.0) == 1
        assert sum(1 for h in headways if h == 7.0) == 1


def test_arrivals_strictly_increasing_and_inside_horizon():
    for idx in range(10):
        spec = generate_trial(PARAMS, idx)
        arr = spec.arrival_times[0]
        assert all(b > a for a, b in zip(arr, arr[1:]))
        assert max(arr) < PARAMS.horizon


def test_interarrival_distribution_matches_exponential():
    # pooled non-inserted headways from the drawn streams of many trials
    headways = []
    for idx in range(400):
        stream, pick = ex.drawn_headways(TrialParams(seed=9), idx)
        skip = set(pick)
        headways.extend(h for k, h in enumerate(stream) if k not in skip)
    sample = np.asarray(headways)
    assert sample.mean() == pytest.approx(4.0, abs=0.1)
    ks = stats.kstest(sample, "expon", args=(0.0, 4.0))
    critical_1pct = 1.63 / math.sqrt(len(sample))
    assert ks.statistic < critical_1pct


def test_degenerate_horizon_raises():
    with pytest.raises((TrialGenerationError, ValueError)):
        generate_trial(TrialParams(seed=1, horizon=6.0), 0)


def test_sessions_share_the_same_trials_across_respondents():
    other = RespondentProfile(id=2, age=31, female=1, primary_mode="car", city="Toronto", hmd_experience=1)
    s1 = build_session(PROFILE, "vire", PARAMS)
    s2 = build_session(other, "vire", PARAMS)
    assert s1.trials == s2.trials
    assert [t.trial_index for t in s1.trials] == list(range(10))


def test_text_and_visual_stages_are_not_interactive():
    s = build_session(PROFILE, "text", PARAMS)
    assert not s.interactive
    assert len(s.trials) == 10
    assert ex.run_session(s, None, None) == s  # metadata only, nothing to simulate


def test_session_requires_exactly_ten_trials():
    trials = tuple(generate_trial(PARAMS, i) for i in range(9))
    with pytest.raises(ValueError, match="10 trials"):
        Session(respondent=PROFILE, stage="vire", trials=trials)


def test_record_preference_once():
    s = build_session(PROFILE, "text", PARAMS)
    s = record_preference(s, "av")
    assert s.preference == "av"
    with pytest.raises(ValueError, match="already recorded"):
        record_preference(s, "current")
    with pytest.raises(ValueError):
        record_preference(build_session(PROFILE, "text", PARAMS), "maybe")


def test_respondent_profile_validation():
    with pytest.raises(ValueError):
        RespondentProfile(id=1, age=17, female=0, primary_mode="car", city="Toronto", hmd_experience=0)
    with pytest.raises(ValueError):
        RespondentProfile(id=1, age=20, female=0, primary_mode="plane", city="Toronto", hmd_experience=0)


def test_realized_arrivals_preserve_inserted_gaps():
    spec = generate_trial(PARAMS, 0)
    raw = spec.arrival_times[0]
    real = realized_arrivals(raw)
    assert len(real) == len(raw)
    diffs = [b - a for a, b in zip(real, real[1:])]
    assert min(diffs) >= ex.MIN_PHYSICAL_HEADWAY - 1e-9
    i5, i7 = spec.gap_insertion_indices
    assert diffs[i5 - 1] == pytest.approx(5.0, abs=1e-9)
    assert diffs[i7 - 1] == pytest.approx(7.0, abs=1e-9)


def test_timeout_at_exactly_the_horizon(scene):
    spec = generate_trial(PARAMS, 0, scenario=SCENARIO_B)
    outcome, log = run_trial(spec, scene, lambda view: (0.0, 0.0), params=PARAMS, record="respondent")
    assert outcome.result == "timeout"
    assert outcome.wait_time == pytest.approx(PARAMS.horizon)
    assert log.end_time <= PARAMS.horizon
    assert log.end_time == pytest.approx(120.0)


def test_autopilot_crosses_inserted_7s_gap_cleanly(scene):
    pp = TrialParams(seed=3)
    spec = generate_trial(pp, 2, scenario=SCENARIO_B)
    openings = gap_openings(spec, scene, params=pp)
    topen = openings[7.0]
    run_params = TrialParams(seed=3, horizon=max(120.0, topen + 40.0))
    ctl = make_autopilot_controller(GapAcceptanceParams(), hold_until=topen)
    outcome, log = run_trial(spec, scene, ctl, params=run_params, record="events")
    assert outcome.result == "crossed"
    assert outcome.accepted_gap == pytest.approx(7.0, abs=1e-6)
    assert not any(e.kind == "accident" for e in log.events)
    # nobody brakes beyond comfort: the incoming car does not need to stop
    assert not any(e.kind == "emergency_brake" for e in log.events)
    assert outcome.min_required_decel_imposed < 2.0


def test_scenario_a_respondent_waits_for_walk_signal(scene):
    spec = generate_trial(PARAMS, 0, scenario=SCENARIO_A)
    ctl = make_autopilot_controller(GapAcceptanceParams())
    outcome, log = run_trial(spec, scene, ctl, params=PARAMS, record="events")
    assert outcome.result == "crossed"
    assert outcome.wait_time >= 35.0  # walk phase begins at t = 35 in the default plan
    started = next(e for e in log.events if e.kind == "crossing_started")
    changes = [e for e in log.events if e.kind == "signal_change" and e.payload["to"] == "walk_green"]
    assert changes and changes[0].t <= started.t


def test_controller_failure_aborts_with_diagnostic(scene):
    spec = generate_trial(PARAMS, 0, scenario=SCENARIO_B)

    def broken(view):
        raise RuntimeError("boom")

    with pytest.raises(TrialAbort, match="controller failed"):
        run_trial(spec, scene, broken, params=PARAMS)


def test_trial_determinism_repeatable(scene):
    spec = generate_trial(PARAMS, 1, scenario=SCENARIO_B)
    outs = []
    for _ in range(2):
        ctl = make_autopilot_controller(GapAcceptanceParams())
        outcome, log = run_trial(spec, scene, ctl, params=PARAMS, record="respondent")
        outs.append((outcome, [(e.kind, e.t, e.subjects) for e in log.events],
                     [(s.t, s.x, s.y) for s in log.samples]))
    assert outs[0] == outs[1]


def test_fast_and_generic_paths_agree(scene):
    pp = TrialParams(seed=17)
    spec = generate_trial(pp, 5, scenario=SCENARIO_B)
    results = {}
    for fast in (False, True):
        ctl = make_autopilot_controller(GapAcceptanceParams())
        outcome, log = run_trial(spec, scene, ctl, params=pp, record="respondent", fast=fast)
        results[fast] = (outcome, log)
    o_gen, l_gen = results[False]
    o_fast, l_fast = results[True]
    assert o_gen.result == o_fast.result
    assert (o_gen.accepted_gap or 0) == pytest.approx(o_fast.accepted_gap or 0, abs=1e-9)
    ev_gen = [(e.kind, round(e.t, 6), e.subjects) for e in l_gen.events]
    ev_fast = [(e.kind, round(e.t, 6), e.subjects) for e in l_fast.events]
    assert ev_gen == ev_fast
    assert len(l_gen.samples) == len(l_fast.samples)
    worst = max(
        abs(a.x - b.x) + abs(a.y - b.y) for a, b in zip(l_gen.samples, l_fast.samples)
    )
    assert worst < 1e-9


def test_jaywalking_autopilot_crosses_on_red(scene):
    spec = generate_trial(TrialParams(seed=8), 0, scenario=SCENARIO_A)
    ctl = make_autopilot_controller(
        GapAcceptanceParams(signal_compliant=False, jaywalk_threshold=6.0)
    )
    outcome, log = run_trial(spec, scene, ctl, params=TrialParams(seed=8), record="events")
    started = next((e for e in log.events if e.kind == "crossing_started"), None)
    assert started is not None
    assert started.t < 35.0  # before the walk phase ever turns green


def test_jaywalking_into_close_human_traffic_is_an_accident(scene):
    # the respondent steps into the lane with the first human-driven car so
    # close that stopping is impossible: the accident ends the trial
    spec = ex.TrialSpec(
        trial_index=0,
        scenario=SCENARIO_A,
        arrival_times=((1.3, 6.3, 11.3, 16.3),),
        gap_insertion_indices=(1, 2),
        seed=0,
    )
    params = TrialParams(seed=0, horizon=30.0)
    outcome, log = ex.run_trial(spec, scene, lambda view: (0.0, 1.4), params=params, record="events")
    assert outcome.result == "accident"
    accident = next(e for e in log.events if e.kind == "accident")
    assert ex.RESPONDENT_ID in accident.subjects
    assert outcome.min_required_decel_imposed > 8.0 or accident.payload.get("mode") == "overlap"
