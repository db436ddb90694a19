"""Trial protocol: precomputed arrival schedules with inserted safe gaps,
sessions of ten fixed-order trials under two scenario variants, trial
execution and outcome classification.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import engine
from .autopilot import GO, WAIT, Approaching, GapAcceptanceParams, control, decide
from .engine import (
    EV_ACCIDENT,
    EV_CROSSING_COMPLETED,
    EV_CROSSING_STARTED,
    AgentSpec,
    SimEvent,
    WorldState,
)
from .scene import Scene, signal_state
from .tracking import BACKGROUND_DECIMATION, TrajectoryLog

SCENARIO_A = "a_signalized_human"
SCENARIO_B = "b_unsignalized_av"
SCENARIOS = (SCENARIO_A, SCENARIO_B)

STAGES = ("text", "visual", "vire")

TRIALS_PER_SESSION = 10
RESPONDENT_ID = 1
VEHICLE_ID_BASE = 100

# Pre-placed traffic is kept at least this far apart in time; beyond the
# engine's car-following range at 50 km/h, arrivals then hit the crossing on
# schedule and the inserted gaps survive intact. Spec arrivals are untouched.
MIN_PHYSICAL_HEADWAY = 3.0


class TrialGenerationError(ValueError):
    pass


class TrialAbort(RuntimeError):
    """Controller failure; distinct from a timeout outcome."""


@dataclass(frozen=True)
class TrialParams:
    mean_headway: float = 4.0
    inserted_gaps: tuple[float, float] = (5.0, 7.0)
    horizon: float = 120.0
    speed_limit: float = 13.89
    vehicle_mix: tuple[tuple[str, float], ...] = ((SCENARIO_A, 0.0), (SCENARIO_B, 1.0))
    seed: int = 0
    approaches: int = 1

    def __post_init__(self):
        if self.mean_headway <= 0.0:
            raise ValueError("mean_headway must be > 0")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be > 0")
        if any(g <= 0.0 for g in self.inserted_gaps):
            raise ValueError("inserted gaps must be > 0")

    def autonomous_fraction(self, scenario: str) -> float:
        for name, frac in self.vehicle_mix:
            if name == scenario:
                return frac
        return 0.0


@dataclass(frozen=True)
class TrialSpec:
    trial_index: int
    scenario: str
    arrival_times: tuple[tuple[float, ...], ...]  # one stream per approach
    gap_insertion_indices: tuple[int, int]        # headway indices of the inserted gaps
    seed: int

    def headways(self, approach: int = 0) -> tuple[float, ...]:
        arr = self.arrival_times[approach]
        return tuple(
            arr[i] if i == 0 else arr[i] - arr[i - 1] for i in range(len(arr))
        )


@dataclass(frozen=True)
class RespondentProfile:
    id: int
    age: float
    female: int
    primary_mode: str  # bike | transit | walk | car
    city: str          # Toronto | Montreal
    hmd_experience: int

    def __post_init__(self):
        if self.age < 18:
            raise ValueError("respondents must be at least 18")
        if self.primary_mode not in ("bike", "transit", "walk", "car"):
            raise ValueError(f"unknown primary mode {self.primary_mode!r}")
        if self.city not in ("Toronto", "Montreal"):
            raise ValueError(f"unknown city {self.city!r}")


@dataclass(frozen=True)
class TrialOutcome:
    result: str  # crossed | accident | timeout
    crossing_time: Optional[float]
    wait_time: float
    accepted_gap: Optional[float]
    min_required_decel_imposed: float


@dataclass(frozen=True)
class Session:
    respondent: RespondentProfile
    stage: str
    trials: tuple[TrialSpec, ...]
    outcomes: tuple[TrialOutcome, ...] = ()
    preference: Optional[str] = None  # current | av

    @property
    def interactive(self) -> bool:
        return self.stage == "vire"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if len(self.trials) != TRIALS_PER_SESSION:
            raise ValueError(f"a session holds exactly {TRIALS_PER_SESSION} trials, got {len(self.trials)}")


# headway draws are quantized to this grid so that cumulative arrival times
# (and therefore the reconstructed headways, inserted gaps included) are exact
# in float arithmetic
_QUANTUM = 2.0**-20


def drawn_headways(
    params: TrialParams, trial_index: int, approach: int = 0, attempt: int = 0
) -> tuple[list[float], tuple[int, int]]:
    """The generator's raw headway stream for one trial and approach.

    Inter-arrivals are i.i.d. exponential draws (before any horizon cut), with
    two positions overwritten to the inserted safe-gap values. The schedule
    stored on a TrialSpec is this stream truncated at the horizon; tests of
    the arrival distribution belong on this stream, because keeping only
    intervals that complete before a horizon biases them short.
    """
    rng = np.random.default_rng((params.seed, trial_index, approach, attempt))
    headways: list[float] = []
    total = 0.0
    while total < params.horizon + 2.0 * sum(params.inserted_gaps):
        h = max(round(float(rng.exponential(params.mean_headway)) / _QUANTUM), 1) * _QUANTUM
        if h in params.inserted_gaps:
            h += _QUANTUM  # keep the inserted values unique in the stream
        headways.append(h)
        total += h
    if approach > 0 or len(headways) < 4:
        return headways, (0, 0)
    # inserted gaps sit between cars, never before the first one
    pick = rng.choice(np.arange(1, len(headways)), size=2, replace=False)
    for where, value in zip(pick, params.inserted_gaps):
        headways[int(where)] = value
    return headways, (int(pick[0]), int(pick[1]))


def generate_trial(params: TrialParams, trial_index: int, scenario: str = SCENARIO_A) -> TrialSpec:
    """Build the precomputed arrival schedule for one trial.

    Inter-arrivals are exponential with the configured mean; two headway
    positions are then overwritten to the inserted safe-gap values, shifting
    all later arrivals; arrivals past the horizon are dropped. Deterministic
    in (seed, trial_index).
    """
    streams: list[tuple[float, ...]] = []
    gap_idx: tuple[int, int] = (0, 0)
    for approach in range(params.approaches):
        for attempt in range(200):
            headways, pick = drawn_headways(params, trial_index, approach, attempt)
            arrivals = np.cumsum(headways)
            keep = arrivals < params.horizon
            if approach > 0:
                streams.append(tuple(float(t) for t in arrivals[keep]))
                break
            if len(headways) < 4:
                continue
            kept = int(keep.sum())
            if all(w < kept for w in pick):
                streams.append(tuple(float(t) for t in arrivals[keep]))
                gap_idx = pick
                break
        else:
            raise TrialGenerationError(
                f"horizon {params.horizon}s cannot accommodate the inserted gaps"
            )
    return TrialSpec(
        trial_index=trial_index,
        scenario=scenario,
        arrival_times=tuple(streams),
        gap_insertion_indices=gap_idx,
        seed=params.seed,
    )


def build_session(profile: RespondentProfile, stage: str, params: TrialParams) -> Session:
    """Ten trials from the protocol-level master seed: identical for everyone."""
    trials = tuple(generate_trial(params, i) for i in range(TRIALS_PER_SESSION))
    return Session(respondent=profile, stage=stage, trials=trials)


def record_preference(session: Session, choice: str) -> Session:
    if choice not in ("current", "av"):
        raise ValueError(f"choice must be 'current' or 'av', got {choice!r}")
    if session.preference is not None:
        raise ValueError("preference already recorded")
    return replace(session, preference=choice)


def realized_arrivals(arrivals: Sequence[float]) -> list[float]:
    """Arrival times after enforcing the single-lane minimum headway.

    Short headways are widened to MIN_PHYSICAL_HEADWAY and everything behind
    shifts by the same amount, which preserves every following headway,
    inserted gaps included.
    """
    out: list[float] = []
    prev = None
    shift = 0.0
    for i, t in enumerate(arrivals):
        t = t + shift
        if prev is not None and t - prev < MIN_PHYSICAL_HEADWAY:
            delta = MIN_PHYSICAL_HEADWAY - (t - prev)
            shift += delta
            t += delta
        out.append(t)
        prev = t
    return out


@dataclass(frozen=True)
class TrialView:
    """What a pedestrian controller sees each tick."""

    t: float
    tick: int
    scenario: str
    signal: Optional[str]
    position: tuple[float, float]
    velocity: tuple[float, float]
    in_zone: bool
    entry_anchor: tuple[float, float]
    exit_anchor: tuple[float, float]
    approaching: tuple[Approaching, ...]


Controller = Callable[[TrialView], tuple[float, float]]


def make_autopilot_controller(p: GapAcceptanceParams, hold_until: float = 0.0) -> Controller:
    """Gap-acceptance controller; optionally holds at the curb until a given time.

    While waiting it stations itself at its own start position (the curb),
    not the crossing boundary, so traffic jostle cannot tip it into the zone.
    """
    committed = False
    post: Optional[tuple[float, float]] = None

    def controller(view: TrialView) -> tuple[float, float]:
        nonlocal committed, post
        if post is None:
            post = view.position
        if not committed and view.t >= hold_until:
            if decide(view.approaching, view.signal, p) == GO:
                committed = True
        decision = GO if committed else WAIT
        return control(view.position, decision, post, view.exit_anchor, p)

    return controller


_WORLD_CACHE: dict = {}


def _template_world(scene: Scene, scenario: str, hz: float = 90.0) -> WorldState:
    signalized = scenario == SCENARIO_A
    key = (scene, signalized, hz)
    if key not in _WORLD_CACHE:
        use = scene if signalized else dataclasses.replace(scene, signal=None)
        _WORLD_CACHE[key] = engine.build_world(use, hz=hz)
    return _WORLD_CACHE[key]


def _spawn_vehicles(
    spec: TrialSpec, params: TrialParams, world: WorldState, crosswalk_id: str
) -> tuple[list[AgentSpec], list[list[float]]]:
    """Pre-place the whole schedule on the approach links, rolling at the limit."""
    index = world.index
    cw = world.scene.crosswalk(crosswalk_id)
    rng = np.random.default_rng((spec.seed, spec.trial_index, 977))
    frac = params.autonomous_fraction(spec.scenario)
    specs: list[AgentSpec] = []
    schedules: list[list[float]] = []
    next_id = VEHICLE_ID_BASE
    streams = min(len(spec.arrival_times), len(cw.crossed_links))
    for k in range(streams):
        link_id = cw.crossed_links[k]
        li = index.link_index[link_id]
        piece = next(
            (p for p in index.pieces if p.link == li and p.crosswalk_id == crosswalk_id), None
        )
        if piece is None:
            raise ValueError(f"link {link_id!r} has no conflict zone for {crosswalk_id!r}")
        v_cruise = index.speed_limit[li]
        arrivals = realized_arrivals(spec.arrival_times[k])
        schedules.append(arrivals)
        for t_arr in arrivals:
            # arrivals beyond the horizon, or beyond what the runway can hold,
            # cannot influence the trial window: they would reach the crossing
            # long after it ends and sit outside every interaction range
            if t_arr > params.horizon + 15.0:
                break
            s = piece.s_entry - v_cruise * t_arr
            if s < 0.0:
                break
            kind = "vehicle_autonomous" if rng.random() < frac else "vehicle_human"
            specs.append(
                AgentSpec(id=next_id, kind=kind, link=link_id, s=s, speed=v_cruise)
            )
            next_id += 1
    return specs, schedules


def gap_openings(spec: TrialSpec, scene: Scene, crosswalk_id: Optional[str] = None,
                 params: Optional[TrialParams] = None) -> dict[float, float]:
    """When each inserted gap opens for a waiting pedestrian.

    A gap opens the moment its leading car reaches the crossing: that car is
    no longer approaching, and the full inserted headway separates the
    pedestrian from the next one.
    """
    params = params or TrialParams(seed=spec.seed)
    arrivals = realized_arrivals(spec.arrival_times[0])
    out = {}
    for idx, gap in zip(spec.gap_insertion_indices, params.inserted_gaps):
        out[gap] = arrivals[idx - 1] + 0.05
    return out


def run_trial(
    spec: TrialSpec,
    scene: Scene,
    controller: Controller,
    params: Optional[TrialParams] = None,
    crosswalk_id: Optional[str] = None,
    record: str = "respondent",  # full | respondent | events
    session_id: str = "",
    on_tick: Optional[Callable[[WorldState, list[SimEvent]], None]] = None,
    interactive: bool = False,
    workers: int = 1,
    fast: Optional[bool] = None,
    gaze: Optional[Callable[[], Optional[float]]] = None,
) -> tuple[TrialOutcome, TrajectoryLog]:
    """Simulate one trial until the respondent crosses, an accident, or the horizon.

    The controller supplies a desired velocity every tick; `on_tick` (used by
    the live session service) observes every new state with its events, and is
    called once with the initial state before the first step. `fast` selects
    the compiled tick kernel (default: automatic when no on_tick observer is
    attached and the world shape allows it); the kernel matches the vectorized
    engine to float precision but not necessarily bit for bit, so comparisons
    against live-session logs should pin fast=False.
    """
    params = params or TrialParams(seed=spec.seed)
    if record not in ("full", "respondent", "events"):
        raise ValueError(f"unknown record mode {record!r}")
    cw = scene.crosswalk(crosswalk_id) if crosswalk_id else scene.crosswalks[0]
    world = _template_world(scene, spec.scenario)
    dt = world.dt

    vehicles, schedules = _spawn_vehicles(spec, params, world, cw.id)
    ped_spawn = next((sp for sp in scene.spawns if sp.kind == "pedestrian"), None)
    start_pos = ped_spawn.position if ped_spawn is not None and ped_spawn.position else cw.entry_anchor
    agents = [
        AgentSpec(
            id=RESPONDENT_ID,
            kind="pedestrian",
            position=start_pos,
            controlled=True,
        )
    ] + vehicles
    world = engine.add_agents(world, agents)

    index = world.index
    ci = index.crosswalk_ids.index(cw.id)
    pieces = [p for p in index.pieces if p.crosswalk_id == cw.id]
    merged_schedule = sorted(t for sched in schedules for t in sched)

    log = TrajectoryLog(
        header={
            "session": session_id,
            "trial": spec.trial_index,
            "scenario": spec.scenario,
            "seed": spec.seed,
            "dt": dt,
            "respondent": RESPONDENT_ID,
            "interactive": interactive,
        }
    )

    horizon_ticks = int(round(params.horizon / dt))
    signal_plan = world.scene.signal
    result = "timeout"
    t_started: Optional[float] = None
    t_completed: Optional[float] = None
    accepted: Optional[float] = None
    max_required = 0.0

    def build_view(w: WorldState) -> TrialView:
        ri = w.index_of(RESPONDENT_ID)
        approaching = []
        vsel = w._selections()[0]
        for piece in pieces:
            # the nearest upstream vehicle per lane is what gap acceptance needs
            on_link = vsel[w.link[vsel] == piece.link]
            d = piece.s_entry - w.s[on_link]
            ahead = d > 0
            if ahead.any():
                j = int(np.argmin(d[ahead]))
                approaching.append(
                    Approaching(distance=float(d[ahead][j]), speed=float(w.speed[on_link][ahead][j]))
                )
        return TrialView(
            t=w.t,
            tick=w.tick,
            scenario=spec.scenario,
            signal=signal_state(signal_plan, w.t) if signal_plan is not None else None,
            position=(float(w.pos[ri, 0]), float(w.pos[ri, 1])),
            velocity=(float(w.vel[ri, 0]), float(w.vel[ri, 1])),
            in_zone=bool(w.zone_mask[ri, ci]) if w.zone_mask.shape[1] else False,
            entry_anchor=tuple(cw.entry_anchor),
            exit_anchor=tuple(cw.exit_anchor),
            approaching=tuple(approaching),
        )

    def tracked_ids(w: WorldState, tick: int) -> list[int]:
        if record == "events":
            return []
        if record == "respondent" or tick % BACKGROUND_DECIMATION:
            return [RESPONDENT_ID]
        return [int(i) for i in w.ids]

    def accepted_gap_at(t: float) -> Optional[float]:
        prev = None
        nxt = None
        for arr in merged_schedule:
            if arr <= t:
                prev = arr
            elif nxt is None:
                nxt = arr
        if prev is None or nxt is None:
            return None
        return nxt - prev

    def annotate(events: list[SimEvent]) -> list[SimEvent]:
        nonlocal t_started, accepted
        out_events = []
        for ev in events:
            if (
                ev.kind == EV_CROSSING_STARTED
                and RESPONDENT_ID in ev.subjects
                and t_started is None
            ):
                t_started = ev.t
                accepted = accepted_gap_at(ev.t)
                payload = dict(ev.payload)
                if accepted is not None:
                    payload["accepted_gap"] = accepted
                ev = replace(ev, payload=payload)
            out_events.append(ev)
        return out_events

    def outcome_from(events: list[SimEvent]) -> bool:
        nonlocal result, t_completed
        stop = False
        for ev in events:
            if ev.kind == EV_ACCIDENT and RESPONDENT_ID in ev.subjects:
                result = "accident"
                stop = True
            elif ev.kind == EV_CROSSING_COMPLETED and RESPONDENT_ID in ev.subjects:
                result = "crossed"
                t_completed = ev.t
                stop = True
        return stop

    from . import fastlane

    use_fast = fast if fast is not None else (on_tick is None and fastlane.FastTrial.supported(world))
    if use_fast:
        max_required = _fast_loop(
            world, spec, cw, ci, pieces, controller, record, log,
            horizon_ticks, signal_plan, annotate, outcome_from,
        )
    else:
        log.record_tick(world, tracked_ids(world, 0))
        if on_tick is not None:
            on_tick(world, [])
        for tick in range(horizon_ticks):
            try:
                desired = controller(build_view(world))
            except TrialAbort:
                raise
            except Exception as exc:  # controller bugs are aborts, not timeouts
                raise TrialAbort(f"controller failed at t={world.t:.3f}: {exc}") from exc
            world, events = engine.step(world, commands={RESPONDENT_ID: desired}, workers=workers)
            events = annotate(events)
            vh = {RESPONDENT_ID: gaze()} if gaze is not None else None
            log.record_tick(world, tracked_ids(world, tick + 1), events, view_headings=vh)
            if on_tick is not None:
                on_tick(world, events)

            # braking demand the respondent imposes while occupying a lane's zone
            ri = world.index_of(RESPONDENT_ID)
            if world.zone_mask.shape[1] and world.zone_mask[ri, ci]:
                p = world.pos[ri : ri + 1]
                for piece in pieces:
                    if not engine._points_in_polygon(p, piece.poly)[0]:
                        continue
                    vsel = world._selections()[0]
                    on_link = vsel[world.link[vsel] == piece.link]
                    d = piece.s_entry - world.s[on_link]
                    ahead = d > 0.1
                    if ahead.any():
                        req = world.speed[on_link][ahead] ** 2 / (2.0 * d[ahead])
                        max_required = max(max_required, float(req.max()))

            if outcome_from(events):
                break

    wait_time = t_started if t_started is not None else params.horizon
    crossing_time = (
        t_completed - t_started if (t_completed is not None and t_started is not None) else None
    )
    outcome = TrialOutcome(
        result=result,
        crossing_time=crossing_time,
        wait_time=wait_time,
        accepted_gap=accepted if result == "crossed" else accepted,
        min_required_decel_imposed=max_required,
    )
    return outcome, log


def _fast_loop(
    world: WorldState,
    spec: TrialSpec,
    cw,
    ci: int,
    pieces,
    controller: Controller,
    record: str,
    log: TrajectoryLog,
    horizon_ticks: int,
    signal_plan,
    annotate,
    outcome_from,
) -> float:
    """Kernel-driven trial loop; mirrors the generic loop's observable stream."""
    from . import fastlane
    from .engine import EV_AV_YIELD, EV_EMERGENCY_BRAKE, EV_SIGNAL_CHANGE
    from .tracking import Sample

    index = world.index
    ft = fastlane.FastTrial(world, RESPONDENT_ID)
    piece_rows = [k for k, p in enumerate(index.pieces) if p.crosswalk_id == cw.id]
    entry = tuple(cw.entry_anchor)
    exit_ = tuple(cw.exit_anchor)
    max_required = 0.0
    accident_keys: set = set()

    def ped_sample() -> Sample:
        px, py, pvx, pvy, ph = ft.ped_sample()
        return Sample(t=ft.t, agent_id=RESPONDENT_ID, kind="pedestrian",
                      x=px, y=py, vx=pvx, vy=pvy, heading=ph)

    def record_samples(tick: int):
        if record == "events":
            return
        log.samples.append(ped_sample())
        log._order.append((0, len(log.samples) - 1))
        if record == "full" and tick % BACKGROUND_DECIMATION == 0:
            x, y, heading = ft.vehicle_positions()
            for k in range(len(ft.v_ids)):
                log.samples.append(
                    Sample(
                        t=ft.t,
                        agent_id=int(ft.v_ids[k]),
                        kind="vehicle_autonomous" if ft.is_av[k] else "vehicle_human",
                        x=float(x[k]),
                        y=float(y[k]),
                        vx=float(np.cos(heading[k]) * ft.speed[k]),
                        vy=float(np.sin(heading[k]) * ft.speed[k]),
                        heading=float(heading[k]),
                    )
                )
                log._order.append((0, len(log.samples) - 1))
        log._last_t = ft.t

    def build_view() -> TrialView:
        approaching = tuple(
            Approaching(distance=float(ft.near_dist[k]), speed=float(ft.near_speed[k]))
            for k in piece_rows
            if np.isfinite(ft.near_dist[k])
        )
        return TrialView(
            t=ft.t,
            tick=ft.tick_no,
            scenario=spec.scenario,
            signal=signal_state(signal_plan, ft.t) if signal_plan is not None else None,
            position=(ft.px, ft.py),
            velocity=(ft.pvx, ft.pvy),
            in_zone=bool(ft.zone[ci]) if len(ft.zone) else False,
            entry_anchor=entry,
            exit_anchor=exit_,
            approaching=approaching,
        )

    record_samples(0)
    phase = signal_state(signal_plan, 0.0) if signal_plan is not None else None
    for tick in range(horizon_ticks):
        try:
            desired = controller(build_view())
        except TrialAbort:
            raise
        except Exception as exc:
            raise TrialAbort(f"controller failed at t={ft.t:.3f}: {exc}") from exc
        info = ft.tick(desired, phase is not None and phase != "vehicle_green")
        events: list[SimEvent] = []
        if signal_plan is not None:
            new_phase = signal_state(signal_plan, ft.t)
            if new_phase != phase:
                events.append(
                    SimEvent(t=ft.t, kind=EV_SIGNAL_CHANGE, payload={"from": phase, "to": new_phase})
                )
                phase = new_phase
        for vid in info["em_started"]:
            events.append(
                SimEvent(t=ft.t, kind=EV_EMERGENCY_BRAKE, subjects=(vid,),
                         payload={"decel": info["em_decel"][vid]})
            )
        for vid in info["yield_started"]:
            events.append(SimEvent(t=ft.t, kind=EV_AV_YIELD, subjects=(vid,)))
        for zci in info["entered"]:
            events.append(
                SimEvent(t=ft.t, kind=EV_CROSSING_STARTED, subjects=(RESPONDENT_ID,),
                         payload={"crosswalk": index.crosswalk_ids[zci]})
            )
        for zci in info["exited"]:
            d_exit = math.hypot(ft.px - index.exit_anchor[zci][0], ft.py - index.exit_anchor[zci][1])
            d_entry = math.hypot(ft.px - index.entry_anchor[zci][0], ft.py - index.entry_anchor[zci][1])
            if d_exit < d_entry:
                events.append(
                    SimEvent(t=ft.t, kind=EV_CROSSING_COMPLETED, subjects=(RESPONDENT_ID,),
                             payload={"crosswalk": index.crosswalk_ids[zci]})
                )
        for vid in info["overlaps"]:
            key = (RESPONDENT_ID, vid)
            if key not in accident_keys:
                accident_keys.add(key)
                events.append(SimEvent(t=ft.t, kind=EV_ACCIDENT, subjects=key, payload={"mode": "overlap"}))
        for vid, required in info["imminent"].items():
            key = (RESPONDENT_ID, vid)
            if key not in accident_keys:
                accident_keys.add(key)
                events.append(
                    SimEvent(t=ft.t, kind=EV_ACCIDENT, subjects=key,
                             payload={"mode": "unavoidable", "required_decel": required})
                )
        events = annotate(events)
        record_samples(tick + 1)
        for ev in events:
            log.add_event(ev)
        max_required = max(max_required, info["min_required"])
        if outcome_from(events):
            break
    return max_required


def run_session(
    session: Session,
    scene: Scene,
    controller_factory: Callable[[TrialSpec], Controller],
    params: Optional[TrialParams] = None,
    scenarios: Sequence[str] = SCENARIOS,
    record: str = "respondent",
    on_log: Optional[Callable[[TrialSpec, TrialOutcome, TrajectoryLog], None]] = None,
) -> Session:
    """Run every trial under each scenario variant, in fixed order."""
    if not session.interactive:
        return session
    outcomes = list(session.outcomes)
    for scenario in scenarios:
        for spec in session.trials:
            variant = replace(spec, scenario=scenario)
            outcome, log = run_trial(
                variant,
                scene,
                controller_factory(variant),
                params=params,
                record=record,
                session_id=f"{session.respondent.id}-{session.stage}",
            )
            outcomes.append(outcome)
            if on_log is not None:
                on_log(variant, outcome, log)
    return replace(session, outcomes=tuple(outcomes))
