"""Live session service: drives trials at the engine rate and bridges them to
clients over newline-delimited JSON frames (full duplex, one frame per line).

Each connection runs one respondent session: hello, session_config, then for
every trial a stream of snapshots (engine downsampled 3:1) with inputs applied
at the next engine tick, then the preference prompt and bye. Sessions are
resumable at the current trial after a disconnect.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from dataclasses import replace as dataclasses_replace
from pathlib import Path
from typing import Optional

from .engine import KIND_NAMES, SimEvent, WorldState
from .experiment import (
    RESPONDENT_ID,
    SCENARIOS,
    RespondentProfile,
    Session,
    TrialAbort,
    TrialParams,
    build_session,
    record_preference,
    run_trial,
)
from .scene import Scene, scene_to_dict, signal_state
from .tracking import export_log
from .wire import Inbox, Outbox, WireError, clamp_speed, decode_frame, encode_frame

SNAPSHOT_EVERY = 3  # engine ticks per snapshot: 90 Hz -> 30 Hz
WALK_V_MAX = 2.0

logger = logging.getLogger(__name__)

DEFAULT_PROFILE = dict(age=26, female=0, primary_mode="transit", city="Montreal", hmd_experience=0)


@dataclass
class SessionRecord:
    session: Session
    scenario_index: int = 0
    trial_index: int = 0
    live: bool = False
    logs: dict = field(default_factory=dict)


class _InputFeed:
    """Thread-safe bridge from the reader task to the engine-side controller."""

    def __init__(self, lockstep: bool):
        self.lockstep = lockstep
        self.inputs: list[tuple[float, float]] = []
        self.latest: tuple[float, float] = (0.0, 0.0)
        self.view_heading: Optional[float] = None
        self.cv = threading.Condition()
        self.closed = False

    def push(self, vx: float, vy: float, view_heading: Optional[float]) -> None:
        with self.cv:
            v = clamp_speed(float(vx), float(vy), WALK_V_MAX)
            self.inputs.append(v)
            self.latest = v
            if view_heading is not None:
                self.view_heading = float(view_heading)
            self.cv.notify_all()

    def close(self) -> None:
        with self.cv:
            self.closed = True
            self.cv.notify_all()

    def get(self, tick: int) -> tuple[float, float]:
        if not self.lockstep:
            with self.cv:
                return self.latest
        idx = tick // SNAPSHOT_EVERY
        with self.cv:
            while len(self.inputs) <= idx and not self.closed:
                self.cv.wait(timeout=30.0)
                if len(self.inputs) <= idx and not self.closed:
                    raise TrialAbort("client input timed out in lockstep mode")
            if self.closed and len(self.inputs) <= idx:
                raise TrialAbort("client disconnected mid-trial")
            return self.inputs[idx]


class SessionServer:
    def __init__(
        self,
        scene: Scene,
        protocol_seed: int = 0,
        params: Optional[TrialParams] = None,
        out_dir: Optional[str] = None,
        host: str = "127.0.0.1",
        port: int = 8450,
        realtime: bool = True,
        scenarios=SCENARIOS,
    ):
        self.scene = scene
        self.params = params or TrialParams(seed=protocol_seed)
        self.out_dir = Path(out_dir) if out_dir else None
        self.host = host
        self.port = port
        self.realtime = realtime
        self.scenarios = tuple(scenarios)
        self.registry: dict[str, SessionRecord] = {}
        self._counter = 0
        self._server: Optional[asyncio.AbstractServer] = None

    async def start(self) -> int:
        self._server = await asyncio.start_server(self._handle, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        return self.port

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    def _new_session(self, profile_payload: Optional[dict]) -> str:
        self._counter += 1
        sid = f"s{self._counter:04d}"
        payload = {**DEFAULT_PROFILE, **(profile_payload or {})}
        profile = RespondentProfile(
            id=self._counter,
            age=float(payload["age"]),
            female=int(payload["female"]),
            primary_mode=payload["primary_mode"],
            city=payload["city"],
            hmd_experience=int(payload["hmd_experience"]),
        )
        self.registry[sid] = SessionRecord(session=build_session(profile, "vire", self.params))
        return sid

    def _snapshot_payload(self, world: WorldState) -> dict:
        agents = []
        for i in range(world.n):
            agents.append(
                {
                    "id": int(world.ids[i]),
                    "kind": KIND_NAMES[world.kind[i]],
                    "x": round(float(world.pos[i, 0]), 4),
                    "y": round(float(world.pos[i, 1]), 4),
                    "vx": round(float(world.vel[i, 0]), 4),
                    "vy": round(float(world.vel[i, 1]), 4),
                    "heading": round(float(world.heading[i]), 4),
                }
            )
        plan = world.scene.signal
        return {
            "t": world.t,
            "tick": world.tick,
            "signal": signal_state(plan, world.t) if plan is not None else None,
            "agents": agents,
        }

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        inbox = Inbox()
        feed: Optional[_InputFeed] = None
        try:
            line = await reader.readline()
            if not line:
                return
            hello = inbox.accept(decode_frame(line))
            if hello.get("type") != "hello":
                raise WireError("expected hello")
            resume = hello.get("resume")
            if resume and resume in self.registry:
                sid = resume
            else:
                sid = self._new_session(hello.get("profile"))
            rec = self.registry[sid]
            if rec.live:
                raise WireError("session already has a live connection")
            rec.live = True
            lockstep = bool(hello.get("lockstep", not self.realtime))
            outbox = Outbox(sid)

            loop = asyncio.get_running_loop()
            outq: asyncio.Queue = asyncio.Queue()

            async def sender():
                while True:
                    msg = await outq.get()
                    if msg is None:
                        break
                    writer.write(encode_frame(msg))
                    await writer.drain()

            send_task = asyncio.create_task(sender())

            def post(msg: dict) -> None:
                loop.call_soon_threadsafe(outq.put_nowait, msg)

            post(
                outbox.make(
                    "session_config",
                    dt=1.0 / 90.0,
                    snapshot_every=SNAPSHOT_EVERY,
                    trials=len(rec.session.trials),
                    scenarios=list(self.scenarios),
                    resume_at={"scenario": rec.scenario_index, "trial": rec.trial_index},
                    horizon=self.params.horizon,
                    lockstep=lockstep,
                    respondent=RESPONDENT_ID,
                    scene=scene_to_dict(self.scene),
                )
            )

            feed = _InputFeed(lockstep)

            async def read_inputs():
                while True:
                    raw = await reader.readline()
                    if not raw:
                        feed.close()
                        return None
                    msg = inbox.accept(decode_frame(raw))
                    if msg["type"] == "input":
                        v = msg.get("v", (0.0, 0.0))
                        feed.push(v[0], v[1], msg.get("view_heading"))
                    elif msg["type"] in ("preference", "bye"):
                        return msg

            reader_task = asyncio.create_task(read_inputs())

            while rec.scenario_index < len(self.scenarios):
                scenario = self.scenarios[rec.scenario_index]
                while rec.trial_index < len(rec.session.trials):
                    spec = dataclasses_replace(rec.session.trials[rec.trial_index], scenario=scenario)
                    post(
                        outbox.make(
                            "event",
                            kind="trial_started",
                            trial=spec.trial_index,
                            scenario=scenario,
                            horizon=self.params.horizon,
                        )
                    )
                    logger.debug("session %s: trial %s/%s starting", sid, scenario, spec.trial_index)
                    outcome, log = await loop.run_in_executor(
                        None, self._run_live_trial, spec, feed, post, outbox, sid
                    )
                    logger.debug("session %s: trial ended %s", sid, outcome.result)
                    rec.session = dataclasses_replace(
                        rec.session, outcomes=rec.session.outcomes + (outcome,)
                    )
                    key = f"{sid}_{scenario}_{spec.trial_index}"
                    rec.logs[key] = log
                    if self.out_dir:
                        self.out_dir.mkdir(parents=True, exist_ok=True)
                        (self.out_dir / f"{key}.jsonl").write_text(export_log(log))
                    post(
                        outbox.make(
                            "event",
                            kind="trial_ended",
                            trial=spec.trial_index,
                            scenario=scenario,
                            result=outcome.result,
                            wait_time=outcome.wait_time,
                            crossing_time=outcome.crossing_time,
                            accepted_gap=outcome.accepted_gap,
                        )
                    )
                    rec.trial_index += 1
                    feed = _InputFeed(lockstep)  # input indices restart per trial
                rec.trial_index = 0
                rec.scenario_index += 1

            logger.debug("session %s: trials complete, prompting", sid)
            post(outbox.make("prompt", choices=["current", "av"]))
            msg = await reader_task
            logger.debug("session %s: reader returned %r", sid, msg and msg.get("type"))
            if msg is None or msg["type"] != "preference":
                raise WireError("expected a preference message")
            rec.session = record_preference(rec.session, msg.get("choice"))
            if self.out_dir:
                self.out_dir.mkdir(parents=True, exist_ok=True)
                with open(self.out_dir / "sessions.jsonl", "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(session_summary(rec.session, sid)) + "\n")
            # direct puts keep ordering: post() defers through the event loop
            outq.put_nowait(outbox.make("bye"))
            outq.put_nowait(None)
            await send_task
        except (WireError, TrialAbort, ConnectionError, asyncio.IncompleteReadError) as exc:
            logger.info("session connection ended: %s", exc)
        except Exception:
            logger.exception("session handler failed")
        finally:
            if feed is not None:
                feed.close()
            if "rec" in locals():
                rec.live = False
            try:
                writer.close()
                await writer.wait_closed()
            except Exception:
                pass

    def _run_live_trial(self, spec, feed: _InputFeed, post, outbox: Outbox, sid: str):
        """Engine thread: run one trial, streaming snapshots and events."""
        pace = 1.0 / 90.0 if self.realtime else 0.0
        next_deadline = time.monotonic()

        def controller(view) -> tuple[float, float]:
            return feed.get(view.tick)

        def on_tick(world: WorldState, events: list[SimEvent]) -> None:
            nonlocal next_deadline
            for ev in events:
                post(
                    outbox.make(
                        "event",
                        kind=ev.kind,
                        t=ev.t,
                        subjects=list(ev.subjects),
                        **ev.payload,
                    )
                )
            if world.tick % SNAPSHOT_EVERY == 0:
                post(outbox.make("snapshot", **self._snapshot_payload(world)))
            if pace:
                next_deadline += pace
                delay = next_deadline - time.monotonic()
                if delay > 0:
                    time.sleep(delay)

        def gaze() -> Optional[float]:
            return feed.view_heading

        return run_trial(
            spec,
            self.scene,
            controller,
            params=self.params,
            record="full",
            session_id=sid,
            on_tick=on_tick,
            interactive=True,
            gaze=gaze,
        )


def session_summary(session: Session, sid: str) -> dict:
    return {
        "session": sid,
        "respondent": session.respondent.id,
        "stage": session.stage,
        "preference": session.preference,
        "age": session.respondent.age,
        "female": session.respondent.female,
        "primary_mode": session.respondent.primary_mode,
        "city": session.respondent.city,
        "hmd_experience": session.respondent.hmd_experience,
        "outcomes": [
            {
                "result": o.result,
                "wait_time": o.wait_time,
                "crossing_time": o.crossing_time,
                "accepted_gap": o.accepted_gap,
                "min_required_decel_imposed": o.min_required_decel_imposed,
            }
            for o in session.outcomes
        ],
    }
