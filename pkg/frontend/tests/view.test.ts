import { describe, expect, it } from "vitest";

import { Snapshot } from "../src/protocol.js";
import { ClientView } from "../src/view.js";

function snap(seq: number, snapNo: number, t: number, x: number): Snapshot {
  return {
    type: "snapshot",
    session: "s",
    seq,
    snap: snapNo,
    t,
    tick: Math.round(t * 90),
    signal: "vehicle_green",
    agents: [
      { id: 1, kind: "pedestrian", x, y: 0, vx: 1, vy: 0, heading: 0 },
    ],
  };
}

describe("snapshot interpolation", () => {
  it("interpolates between the two buffered snapshots", () => {
    const view = new ClientView();
    view.pushSnapshot(snap(0, 0, 0.0, 0.0), 1000);
    view.pushSnapshot(snap(1, 1, 0.033, 3.0), 1033);
    const mid = view.poses(1033 + 16.5)[0]; // half an interval after arrival
    expect(mid.x).toBeGreaterThan(1.2);
    expect(mid.x).toBeLessThan(1.8);
  });

  it("never extrapolates beyond one snapshot interval", () => {
    const view = new ClientView();
    view.pushSnapshot(snap(0, 0, 0.0, 0.0), 1000);
    view.pushSnapshot(snap(1, 1, 0.033, 3.0), 1033);
    const frozen = view.poses(1033 + 400)[0]; // long network stall
    expect(frozen.x).toBe(3.0);
    expect(view.stalled).toBe(true);
  });

  it("uses the only snapshot directly before a second arrives", () => {
    const view = new ClientView();
    view.pushSnapshot(snap(0, 0, 0.0, 2.5), 1000);
    expect(view.poses(5000)[0].x).toBe(2.5);
  });
});

describe("trial banners", () => {
  it("tracks trial, countdown, result and accident state", () => {
    const view = new ClientView();
    view.trialStarted(2, "b_unsignalized_av", 120);
    expect(view.banner.trial).toBe(2);
    view.pushSnapshot(snap(0, 0, 30.0, 0), 1000);
    expect(view.banner.countdown).toBeCloseTo(90, 5);
    view.accidentHappened();
    expect(view.banner.accident).toBe(true);
    view.trialEnded("accident");
    expect(view.banner.result).toBe("accident");
    view.showPrompt(["current", "av"]);
    expect(view.prompt.visible).toBe(true);
  });
});
