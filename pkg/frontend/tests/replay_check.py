"""Replay a live-session trial in batch mode and compare the logs byte for byte.

Usage: replay_check.py LOG_PATH SESSION_ID SCENARIO TRIAL_INDEX VX VY SEED HORIZON [GAZE]
Prints MATCH or MISMATCH.
"""

import dataclasses
import sys

from crossim import bundled_scene_text
from crossim.experiment import RespondentProfile, TrialParams, build_session, run_trial
from crossim.scene import load_scene
from crossim.tracking import export_log
from crossim.wire import clamp_speed


def main() -> int:
    log_path, session_id, scenario, trial_index, vx, vy, seed, horizon = sys.argv[1:9]
    gaze = float(sys.argv[9]) if len(sys.argv) > 9 else None
    scene = load_scene(bundled_scene_text())
    params = TrialParams(seed=int(seed), horizon=float(horizon))
    profile = RespondentProfile(
        id=1, age=26, female=0, primary_mode="transit", city="Montreal", hmd_experience=0
    )
    session = build_session(profile, "vire", params)
    spec = dataclasses.replace(session.trials[int(trial_index)], scenario=scenario)
    v = clamp_speed(float(vx), float(vy), 2.0)

    outcome, log = run_trial(
        spec,
        scene,
        lambda view: v,
        params=params,
        record="full",
        session_id=session_id,
        interactive=True,
        fast=False,
        gaze=(lambda: gaze) if gaze is not None else None,
    )
    with open(log_path, "r", encoding="utf-8") as fh:
        server_log = fh.read()
    if export_log(log) == server_log:
        print("MATCH")
        return 0
    print("MISMATCH")
    return 1


if __name__ == "__main__":
    sys.exit(main())
