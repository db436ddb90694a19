"""Per-tick trajectory and event recording, line-delimited export, summary metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .engine import (
    EV_ACCIDENT,
    EV_CROSSING_COMPLETED,
    EV_CROSSING_STARTED,
    KIND_CODES,
    SimEvent,
    WorldState,
)
from .social_force import (
    CYCLIST_RADIUS,
    PEDESTRIAN_RADIUS,
    VEHICLE_LENGTH,
    VEHICLE_WIDTH,
    nearest_point_on_rect,
)

BACKGROUND_DECIMATION = 9  # background agents at 10 Hz when the engine runs at 90 Hz


@dataclass(frozen=True)
class Sample:
    t: float
    agent_id: int
    kind: str
    x: float
    y: float
    vx: float
    vy: float
    heading: float
    view_heading: Optional[float] = None  # client-supplied gaze, if any


@dataclass
class TrajectoryLog:
    header: dict
    samples: list[Sample] = field(default_factory=list)
    events: list[SimEvent] = field(default_factory=list)
    _order: list[tuple[int, int]] = field(default_factory=list)  # (list id, index) in record order
    _last_t: float = -math.inf

    def record_tick(
        self,
        world: WorldState,
        tracked_ids: Iterable[int],
        events: Sequence[SimEvent] = (),
        view_headings: Optional[dict] = None,
    ) -> "TrajectoryLog":
        """Append one sample per tracked agent and any new events."""
        if world.t < self._last_t:
            raise ValueError(f"out-of-order tick: t={world.t} after t={self._last_t}")
        self._last_t = world.t
        for agent_id in tracked_ids:
            i = world.index_of(agent_id)
            vh = None if view_headings is None else view_headings.get(agent_id)
            self.samples.append(
                Sample(
                    t=world.t,
                    agent_id=int(agent_id),
                    kind=("vehicle_human", "vehicle_autonomous", "pedestrian", "cyclist")[world.kind[i]],
                    x=float(world.pos[i, 0]),
                    y=float(world.pos[i, 1]),
                    vx=float(world.vel[i, 0]),
                    vy=float(world.vel[i, 1]),
                    heading=float(world.heading[i]),
                    view_heading=vh,
                )
            )
            self._order.append((0, len(self.samples) - 1))
        for ev in events:
            self.events.append(ev)
            self._order.append((1, len(self.events) - 1))
        return self

    def add_event(self, event: SimEvent) -> None:
        self.events.append(event)
        self._order.append((1, len(self.events) - 1))

    def records(self):
        """Samples and events interleaved in recording (time) order."""
        for which, idx in self._order:
            yield (self.samples[idx] if which == 0 else self.events[idx])

    @property
    def end_time(self) -> float:
        out = 0.0
        if self.samples:
            out = max(out, self.samples[-1].t)
        if self.events:
            out = max(out, max(e.t for e in self.events))
        return out


def export_log(log: TrajectoryLog) -> str:
    """One header line, then one line per sample or event in time order."""
    lines = [json.dumps({"type": "header", **log.header})]
    for rec in log.records():
        if isinstance(rec, Sample):
            row = {
                "type": "sample",
                "t": rec.t,
                "id": rec.agent_id,
                "kind": rec.kind,
                "x": rec.x,
                "y": rec.y,
                "vx": rec.vx,
                "vy": rec.vy,
                "heading": rec.heading,
            }
            if rec.view_heading is not None:
                row["view_heading"] = rec.view_heading
        else:
            row = {
                "type": "event",
                "t": rec.t,
                "kind": rec.kind,
                "subjects": list(rec.subjects),
                **rec.payload,
            }
        lines.append(json.dumps(row))
    return "\n".join(lines) + "\n"


def import_log(text: str) -> TrajectoryLog:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty log document")
    head = json.loads(lines[0])
    if head.get("type") != "header":
        raise ValueError("log must start with a header record")
    head.pop("type")
    log = TrajectoryLog(header=head)
    for ln in lines[1:]:
        row = json.loads(ln)
        rtype = row.pop("type")
        if rtype == "sample":
            log.samples.append(
                Sample(
                    t=row["t"],
                    agent_id=row["id"],
                    kind=row.get("kind", "pedestrian"),
                    x=row["x"],
                    y=row["y"],
                    vx=row["vx"],
                    vy=row["vy"],
                    heading=row["heading"],
                    view_heading=row.get("view_heading"),
                )
            )
            log._order.append((0, len(log.samples) - 1))
        elif rtype == "event":
            t = row.pop("t")
            kind = row.pop("kind")
            subjects = tuple(row.pop("subjects", ()))
            log.events.append(SimEvent(t=t, kind=kind, subjects=subjects, payload=row))
            log._order.append((1, len(log.events) - 1))
        else:
            raise ValueError(f"unknown record type {rtype!r}")
    log._last_t = log.end_time
    return log


def save_log(log: TrajectoryLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(export_log(log))


def load_log(path) -> TrajectoryLog:
    with open(path, "r", encoding="utf-8") as fh:
        return import_log(fh.read())


@dataclass(frozen=True)
class TrialMetrics:
    wait_time: float
    crossing_duration: Optional[float]
    min_distance_to_vehicle: Optional[float]
    accepted_gap: Optional[float]
    path_length: float


def _vehicle_distance(px: float, py: float, sample: Sample) -> float:
    ref = nearest_point_on_rect(
        (px, py), (sample.x, sample.y), sample.heading, VEHICLE_LENGTH / 2.0, VEHICLE_WIDTH / 2.0
    )
    return math.hypot(px - ref[0], py - ref[1])


def summarize(log: TrajectoryLog, respondent_id: Optional[int] = None) -> TrialMetrics:
    """Pure summary of a completed trial log."""
    rid = respondent_id if respondent_id is not None else log.header.get("respondent")
    mine = [s for s in log.samples if s.agent_id == rid]
    if not mine:
        raise ValueError("log has no respondent samples")
    t0 = mine[0].t
    t_end = log.end_time

    started = None
    completed = None
    accepted = None
    accident = False
    for ev in log.events:
        if ev.kind == EV_CROSSING_STARTED and rid in ev.subjects and started is None:
            started = ev.t
            accepted = ev.payload.get("accepted_gap")
        elif ev.kind == EV_CROSSING_COMPLETED and rid in ev.subjects and completed is None:
            completed = ev.t
        elif ev.kind == EV_ACCIDENT and rid in ev.subjects:
            accident = True

    wait_time = (started - t0) if started is not None else (t_end - t0)
    crossing_duration = (completed - started) if (started is not None and completed is not None) else None

    path_length = 0.0
    for a, b in zip(mine[:-1], mine[1:]):
        path_length += math.hypot(b.x - a.x, b.y - a.y)

    min_dist = None
    by_t: dict[float, list[Sample]] = {}
    for s in log.samples:
        if s.agent_id != rid and s.kind.startswith("vehicle"):
            by_t.setdefault(s.t, []).append(s)
    for s in mine:
        for veh in by_t.get(s.t, ()):  # vehicles sampled at the same tick
            d = _vehicle_distance(s.x, s.y, veh)
            if min_dist is None or d < min_dist:
                min_dist = d
    if accident:
        min_dist = 0.0  # overlap by definition, decimation may miss the exact tick

    return TrialMetrics(
        wait_time=wait_time,
        crossing_duration=crossing_duration,
        min_distance_to_vehicle=min_dist,
        accepted_gap=accepted,
        path_length=path_length,
    )
