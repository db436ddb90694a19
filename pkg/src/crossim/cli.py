"""Command-line entry points: benchmarking, batch experiments, estimation,
scene validation and the live session service.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import choice, engine, experiment, report
from .autopilot import GapAcceptanceParams
from .scene import (
    Scene,
    Link,
    Node,
    SceneError,
    load_scene,
    load_scene_file,
    validate_scene,
)
from .server import SessionServer, session_summary
from .tracking import export_log

BUNDLED_SCENE = Path(__file__).parent / "data" / "laurier_rivard.json"

# reference choice shares used for synthetic preference assignment
REFERENCE_SHARES = {"text": 0.50, "visual": 0.381, "vire": 0.690}

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _load_scene_arg(path: str) -> Scene:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"scene file not found: {path}")
    return load_scene_file(p)


# ---------------------------------------------------------------- benchmark

def make_bench_world(n_agents: int, seed: int) -> engine.WorldState:
    """Synthetic dense world: ring traffic plus a walking plaza."""
    rng = np.random.default_rng(seed)
    n_veh = int(n_agents * 0.6)
    n_cyc = int(n_agents * 0.05)
    n_ped = n_agents - n_veh - n_cyc

    spacing = 30.0  # m, inside car-following range so the IDM terms stay hot
    per_link = 100
    n_links = max(1, (n_veh + per_link - 1) // per_link)
    length = per_link * spacing
    nodes = []
    links = []
    for k in range(n_links):
        y = 40.0 * k
        nodes.append(Node(id=f"a{k}", position=(0.0, y)))
        nodes.append(Node(id=f"b{k}", position=(length, y)))
        links.append(
            Link(
                id=f"ring{k}",
                from_node=f"a{k}",
                to_node=f"b{k}",
                lane_count=1,
                lane_width=3.5,
                speed_limit=13.89,
                centerline=((0.0, y), (length, y)),
            )
        )
    # plaza well away from the roads
    px0, py0, side = 5000.0, 5000.0, max(150.0, math_sqrt_area(n_ped + n_cyc))
    walk_area = (
        (px0, py0),
        (px0 + side, py0),
        (px0 + side, py0 + side),
        (px0, py0 + side),
    )
    scene = Scene(
        nodes=tuple(nodes),
        links=tuple(links),
        crosswalks=(),
        spawns=(),
        signal=None,
        walk_area=walk_area,
        obstacles=(),
    )
    validate_scene(scene)
    world = engine.build_world(scene, loop_links=[l.id for l in links], seed=seed)

    specs = []
    next_id = 1
    for i in range(n_veh):
        link = links[i // per_link]
        slot = i % per_link
        specs.append(
            engine.AgentSpec(
                id=next_id,
                kind="vehicle_autonomous" if i % 3 == 0 else "vehicle_human",
                link=link.id,
                s=slot * spacing + float(rng.uniform(-2.0, 2.0)),
                speed=float(rng.uniform(10.0, 13.0)),
            )
        )
        next_id += 1
    margin = 2.0
    for i in range(n_ped + n_cyc):
        kind = "pedestrian" if i < n_ped else "cyclist"
        pos = (
            float(px0 + margin + rng.uniform(0, side - 2 * margin)),
            float(py0 + margin + rng.uniform(0, side - 2 * margin)),
        )
        goal = (
            float(px0 + side - (pos[0] - px0)),
            float(py0 + side - (pos[1] - py0)),
        )
        specs.append(engine.AgentSpec(id=next_id, kind=kind, position=pos, goal=goal))
        next_id += 1
    return engine.add_agents(world, specs)


def math_sqrt_area(n_walkers: int, density: float = 0.07) -> float:
    return float(np.sqrt(max(n_walkers, 1) / density))


def cmd_bench(args) -> int:
    if args.agents < 1:
        print("bench: --agents must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    world = make_bench_world(args.agents, args.seed)
    print(f"bench: {world.n} agents ({int((world.kind <= 1).sum())} vehicles, "
          f"{int((world.kind == 2).sum())} pedestrians, {int((world.kind == 3).sum())} cyclists)")

    # warmup
    w = world
    for _ in range(10):
        w, _ = engine.step(w, workers=args.workers)

    per_second = []
    checksum = 0.0
    total_steps = 0
    t_end = time.perf_counter() + args.seconds
    while time.perf_counter() < t_end:
        bucket_end = time.perf_counter() + 1.0
        steps = 0
        while time.perf_counter() < bucket_end:
            w, _ = engine.step(w, workers=args.workers)
            steps += 1
        per_second.append(steps)
        total_steps += steps
    checksum = float(np.sum(w.pos)) if w.n else 0.0
    mean_rate = float(np.mean(per_second))
    p5_rate = float(np.percentile(per_second, 5))

    # rough per-phase timing on a few instrumented steps
    vsel, wsel = w._selections()
    t0 = time.perf_counter()
    for _ in range(5):
        engine._vehicle_accels(w, vsel)
    t_veh = (time.perf_counter() - t0) / 5
    t0 = time.perf_counter()
    for _ in range(5):
        ctx = engine._WalkerContext(w, wsel, vsel)
        engine._walker_accels_range(ctx, 0, len(wsel))
    t_walk = (time.perf_counter() - t0) / 5
    t0 = time.perf_counter()
    for _ in range(5):
        engine.step(w, workers=args.workers)
    t_step = (time.perf_counter() - t0) / 5

    print(f"bench: mean {mean_rate:.1f} steps/s, p5 {p5_rate:.1f} steps/s over {len(per_second)} s "
          f"({total_steps} steps)")
    print(f"bench: phase timing per step: vehicles {t_veh*1e3:.2f} ms, walkers {t_walk*1e3:.2f} ms, "
          f"full step {t_step*1e3:.2f} ms")
    print(f"bench: position checksum {checksum:.6f} (seed {args.seed})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", newline="") as fh:
            wcsv = csv.writer(fh)
            wcsv.writerow(["second", "steps"])
            for i, sct in enumerate(per_second):
                wcsv.writerow([i + 1, sct])
            wcsv.writerow(["mean", mean_rate])
            wcsv.writerow(["p5", p5_rate])
        report.plot_bench(per_second, target=90.0, path=out / "bench.png")
        print(f"bench: wrote {out/'bench.csv'} and {out/'bench.png'}")
    return EXIT_OK


# ---------------------------------------------------------------- respondents

def synthesize_respondents(n: int, seed: int) -> list[experiment.RespondentProfile]:
    """Profiles matching the study sample statistics."""
    rng = np.random.default_rng((seed, 7321))
    out = []
    modes = ["bike", "transit", "walk", "car"]
    mode_p = [0.12, 0.45, 0.19, 0.24]
    for i in range(n):
        age = float(np.clip(np.round(rng.normal(26.0, 5.0)), 19, 40))
        out.append(
            experiment.RespondentProfile(
                id=i + 1,
                age=age,
                female=int(rng.random() < 0.43),
                primary_mode=modes[int(rng.choice(4, p=mode_p))],
                city="Toronto" if rng.random() < 0.415 else "Montreal",
                hmd_experience=int(rng.random() < 0.36),
            )
        )
    return out


def load_respondents(path: str) -> list[experiment.RespondentProfile]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                experiment.RespondentProfile(
                    id=int(row["id"]),
                    age=float(row["age"]),
                    female=int(row["female"]),
                    primary_mode=row["primary_mode"],
                    city=row["city"],
                    hmd_experience=int(row["hmd_experience"]),
                )
            )
    return out


def save_respondents(profiles, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "age", "female", "primary_mode", "city", "hmd_experience"])
        for p in profiles:
            w.writerow([p.id, p.age, p.female, p.primary_mode, p.city, p.hmd_experience])


def assign_preferences(sessions, rule: str, seed: int, shares=None):
    """Synthetic preference assignment: exact shares or a logit draw."""
    shares = shares or REFERENCE_SHARES
    rng = np.random.default_rng((seed, 515))
    by_stage: dict[str, list[int]] = {}
    for i, s in enumerate(sessions):
        by_stage.setdefault(s.stage, []).append(i)
    out = list(sessions)
    if rule == "shares":
        for stage, idxs in sorted(by_stage.items()):
            n_av = int(round(shares.get(stage, 0.5) * len(idxs)))
            order = rng.permutation(len(idxs))
            for rank, j in enumerate(order):
                out[idxs[j]] = experiment.record_preference(
                    out[idxs[j]], "av" if rank < n_av else "current"
                )
    elif rule == "logit":
        beta = {"ASC_AV": 0.3, "Age": 0.5, "Female": -0.8, "Bike_male": 1.0, "Toronto": -0.5, "HMD": 0.8}
        spec = choice.UtilitySpec()
        ages = [s.respondent.age for s in sessions]
        mean, sd = float(np.mean(ages)), float(np.std(ages) or 1.0)
        for i, s in enumerate(out):
            male = 1 - s.respondent.female
            x = [
                ("ASC_AV", 1.0),
                ("Age", (s.respondent.age - mean) / sd),
                ("Female", float(s.respondent.female)),
                ("Bike_male", float((s.respondent.primary_mode == "bike") * male)),
                ("Toronto", float(s.respondent.city == "Toronto")),
            ]
            if s.stage == "vire":
                x.append(("HMD", float(s.respondent.hmd_experience)))
            row = choice.ChoiceObservation(s.respondent.id, s.stage, tuple(x), 0)
            p = choice.choice_probability(row, spec, beta, {"text": 1.16, "visual": 1.16})
            out[i] = experiment.record_preference(s, "av" if rng.random() < p else "current")
    else:
        raise ValueError(f"unknown preference rule {rule!r}")
    return out


def cmd_run_batch(args) -> int:
    try:
        scene = _load_scene_arg(args.scene)
    except (FileNotFoundError, SceneError) as exc:
        print(f"run-batch: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.respondents:
        profiles = load_respondents(args.respondents)
    else:
        profiles = synthesize_respondents(args.synthetic_respondents, args.seed)
        save_respondents(profiles, out_dir / "respondents.csv")
    params = experiment.TrialParams(seed=args.seed)
    ap = GapAcceptanceParams(critical_gap=args.critical_gap, walk_speed=args.walk_speed)

    stages = args.stages.split(",")
    sessions = []
    logs_dir = out_dir / "logs"
    logs_dir.mkdir(exist_ok=True)
    t0 = time.perf_counter()
    for profile in profiles:
        for stage in stages:
            session = experiment.build_session(profile, stage, params)
            if session.interactive:
                def on_log(spec, outcome, log, _pid=profile.id, _stage=stage):
                    name = f"{_pid}_{_stage}_{spec.scenario}_{spec.trial_index}.jsonl"
                    with open(logs_dir / name, "w", encoding="utf-8") as fh:
                        fh.write(export_log(log))

                session = experiment.run_session(
                    session,
                    scene,
                    lambda spec: experiment.make_autopilot_controller(ap),
                    params=params,
                    record=args.record,
                    on_log=on_log,
                )
            sessions.append(session)
    sessions = assign_preferences(sessions, args.preference_rule, args.seed)
    with open(out_dir / "sessions.jsonl", "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(json.dumps(session_summary(s, f"{s.respondent.id}-{s.stage}")) + "\n")
    rows = choice.build_dataset(sessions)
    choice.save_dataset(rows, out_dir / "choices.csv")
    shares = choice.dataset_shares(rows)
    report.plot_shares(shares, out_dir / "shares.png")
    vire_sessions = [s for s in sessions if s.stage == "vire"]
    if vire_sessions:
        report.plot_outcomes(vire_sessions, out_dir / "outcomes.png")
        sample_log = next(logs_dir.glob("*.jsonl"), None)
        if sample_log:
            from .tracking import load_log

            report.plot_trial(load_log(sample_log), scene, out_dir / "trial.png")
    print(f"run-batch: {len(profiles)} respondents x {stages} in {time.perf_counter()-t0:.1f}s")
    print(f"run-batch: shares {json.dumps({k: round(v,3) for k, v in shares.items()})}")
    print(f"run-batch: wrote sessions.jsonl, choices.csv and figures to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------- estimation

def cmd_estimate(args) -> int:
    datasets = []
    for path in args.data:
        p = Path(path)
        if not p.exists():
            print(f"estimate: dataset not found: {path}", file=sys.stderr)
            return EXIT_USAGE
        datasets.append(choice.load_dataset(p))
    spec = choice.UtilitySpec(
        scale_groups=tuple((ds, ds) for ds in choice.DATASETS),
        reference=args.reference,
    )
    try:
        if args.joint:
            result = choice.estimate_joint(datasets, spec)
        else:
            pooled = [row for ds in datasets for row in ds]
            by_ds: dict[str, list] = {}
            for row in pooled:
                by_ds.setdefault(row.dataset, []).append(row)
            if len(by_ds) != 1:
                print("estimate: multiple datasets need --joint", file=sys.stderr)
                return EXIT_USAGE
            result = choice.estimate(pooled, choice.UtilitySpec())
    except choice.EstimationError as exc:
        print(f"estimate: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    text = choice.format_result(result)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        report.plot_estimation(result, out.with_suffix(".png"))
        print(f"estimate: wrote {out} and {out.with_suffix('.png')}")
    return EXIT_OK


def cmd_validate_scene(args) -> int:
    try:
        scene = _load_scene_arg(args.scene)
    except FileNotFoundError as exc:
        print(f"validate-scene: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SceneError as exc:
        print(f"validate-scene: INVALID: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(
        f"validate-scene: OK ({len(scene.nodes)} nodes, {len(scene.links)} links, "
        f"{len(scene.crosswalks)} crosswalks, signal={'yes' if scene.signal else 'no'})"
    )
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        scene = _load_scene_arg(args.scene)
    except (FileNotFoundError, SceneError) as exc:
        print(f"serve: {exc}", file=sys.stderr)
        return EXIT_USAGE
    server = SessionServer(
        scene,
        params=experiment.TrialParams(seed=args.seed, horizon=args.horizon),
        out_dir=args.out,
        host=args.host,
        port=args.port,
        realtime=not args.turbo,
    )

    async def main():
        port = await server.start()
        print(f"serve: listening on {args.host}:{port} (seed {args.seed}, "
              f"{'turbo' if args.turbo else 'realtime'})")
        await server.serve_forever()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        print("serve: shutting down")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossim",
        description="street-crossing micro-simulation and stated-choice toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="headless stepping throughput on a synthetic dense scene")
    b.add_argument("--agents", type=int, default=10000)
    b.add_argument("--seconds", type=float, default=10.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", default=None, help="directory for bench.csv and bench.png")
    b.set_defaults(fn=cmd_bench)

    r = sub.add_parser("run-batch", help="autopilot batch: sessions, logs, choice dataset")
    r.add_argument("--scene", default=str(BUNDLED_SCENE))
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--respondents", default=None, help="CSV of respondent profiles")
    r.add_argument("--synthetic-respondents", type=int, default=42)
    r.add_argument("--out", required=True)
    r.add_argument("--stages", default="text,visual,vire")
    r.add_argument("--record", default="respondent", choices=["full", "respondent", "events"])
    r.add_argument("--critical-gap", type=float, default=4.8)
    r.add_argument("--walk-speed", type=float, default=1.4)
    r.add_argument("--preference-rule", default="shares", choices=["shares", "logit"])
    r.set_defaults(fn=cmd_run_batch)

    e = sub.add_parser("estimate", help="fit choice models and write the estimates report")
    e.add_argument("--data", nargs="+", required=True)
    e.add_argument("--joint", action="store_true")
    e.add_argument("--reference", default="vire")
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_estimate)

    v = sub.add_parser("validate-scene", help="check a scene document")
    v.add_argument("scene")
    v.set_defaults(fn=cmd_validate_scene)

    s = sub.add_parser("serve", help="live session service for browser clients")
    s.add_argument("--scene", default=str(BUNDLED_SCENE))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8450)
    s.add_argument("--out", default=None)
    s.add_argument("--turbo", action="store_true", help="no wall-clock pacing (scripted clients)")
    s.add_argument("--horizon", type=float, default=120.0, help="trial horizon in seconds")
    s.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # surface runtime failures with a nonzero exit
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
