import { describe, expect, it } from "vitest";

import { KIND_COLORS, Surface, render } from "../src/render.js";
import { SceneDocument, Snapshot } from "../src/protocol.js";
import { ClientView } from "../src/view.js";

/** Records every draw call so assertions can inspect what was rendered. */
class RecordingSurface implements Surface {
  canvas = { width: 960, height: 420 };
  fillStyle: string | CanvasGradient | CanvasPattern = "";
  strokeStyle: string | CanvasGradient | CanvasPattern = "";
  lineWidth = 1;
  font = "";
  textAlign = "";
  fills: string[] = [];
  texts: string[] = [];
  ops: string[] = [];

  save() { this.ops.push("save"); }
  restore() { this.ops.push("restore"); }
  translate() { this.ops.push("translate"); }
  scale() { this.ops.push("scale"); }
  rotate() { this.ops.push("rotate"); }
  beginPath() { this.ops.push("beginPath"); }
  moveTo() {}
  lineTo() {}
  closePath() {}
  arc() { this.ops.push("arc"); }
  rect() { this.ops.push("rect"); }
  fill() { this.fills.push(String(this.fillStyle)); }
  stroke() { this.ops.push("stroke"); }
  fillRect() { this.fills.push(String(this.fillStyle)); }
  fillText(text: string) { this.texts.push(text); }
}

const SCENE: SceneDocument = {
  nodes: [
    { id: "a", position: [-50, -1.75] },
    { id: "b", position: [50, -1.75] },
  ],
  links: [
    { id: "near", lane_count: 1, lane_width: 3.5, centerline: [[-50, -1.75], [50, -1.75]] },
    { id: "far", lane_count: 1, lane_width: 3.5, centerline: [[-50, 1.75], [50, 1.75]] },
  ],
  crosswalks: [
    {
      id: "main",
      polygon: [[0, -3.5], [3, -3.5], [3, 3.5], [0, 3.5]],
      entry_anchor: [1.5, -3.5],
      exit_anchor: [1.5, 3.5],
    },
  ],
  walk_area: [[-20, -6], [20, -6], [20, 6], [-20, 6]],
};

function snapshotWithAllKinds(signal: string): Snapshot {
  return {
    type: "snapshot",
    session: "s",
    seq: 0,
    snap: 0,
    t: 12.0,
    tick: 1080,
    signal,
    agents: [
      { id: 1, kind: "pedestrian", x: 1.5, y: -4, vx: 0, vy: 0, heading: 1.57 },
      { id: 2, kind: "vehicle_human", x: -20, y: -1.75, vx: 13, vy: 0, heading: 0 },
      { id: 3, kind: "vehicle_autonomous", x: -35, y: -1.75, vx: 13, vy: 0, heading: 0 },
      { id: 4, kind: "cyclist", x: 8, y: -5, vx: 4, vy: 0, heading: 0 },
    ],
  };
}

function viewWith(signal: string): ClientView {
  const view = new ClientView();
  view.scene = SCENE;
  view.trialStarted(0, "a_signalized_human", 120);
  view.pushSnapshot(snapshotWithAllKinds(signal), Date.now());
  return view;
}

describe("frame rendering", () => {
  it("draws every agent kind with its own colour", () => {
    const ctx = new RecordingSurface();
    render(viewWith("vehicle_green"), ctx, Date.now());
    for (const colour of Object.values(KIND_COLORS)) {
      expect(ctx.fills).toContain(colour);
    }
  });

  it("shows the walk signal green and the wait signal red", () => {
    const walk = new RecordingSurface();
    render(viewWith("walk_green"), walk, Date.now());
    expect(walk.fills).toContain("#2ecc40");
    expect(walk.texts).toContain("WALK");

    const wait = new RecordingSurface();
    render(viewWith("vehicle_green"), wait, Date.now());
    expect(wait.fills).toContain("#ff4136");
    expect(wait.texts).toContain("WAIT");
  });

  it("renders the trial banner and countdown", () => {
    const ctx = new RecordingSurface();
    render(viewWith("vehicle_green"), ctx, Date.now());
    expect(ctx.texts.some((t) => t.includes("trial 1"))).toBe(true);
    expect(ctx.texts.some((t) => t.includes("time left"))).toBe(true);
  });

  it("shows a blocking accident notification", () => {
    const view = viewWith("vehicle_green");
    view.accidentHappened();
    const ctx = new RecordingSurface();
    render(view, ctx, Date.now());
    expect(ctx.texts.some((t) => t.toLowerCase().includes("accident"))).toBe(true);
  });

  it("shows the final preference prompt", () => {
    const view = viewWith("vehicle_green");
    view.showPrompt(["current", "av"]);
    const ctx = new RecordingSurface();
    render(view, ctx, Date.now());
    expect(ctx.texts.some((t) => t.includes("[1] current"))).toBe(true);
  });

  it("renders the bare scene before any snapshot", () => {
    const view = new ClientView();
    view.scene = SCENE;
    const ctx = new RecordingSurface();
    render(view, ctx, Date.now());
    expect(ctx.fills.length).toBeGreaterThan(2); // walk area, road bands, crossing
  });
});

describe("keyboard input", async () => {
  const { KeyboardInput } = await import("../src/keyboard.js");

  it("maps held keys to a walking-pace velocity", () => {
    const keys = new KeyboardInput();
    keys.keyDown("ArrowUp");
    const [vx, vy] = keys.desiredVelocity();
    expect(vx).toBeCloseTo(0);
    expect(vy).toBeCloseTo(1.4);
    keys.keyDown("ArrowRight");
    const [dx, dy] = keys.desiredVelocity();
    expect(Math.hypot(dx, dy)).toBeCloseTo(1.4, 6); // diagonals are not faster
    keys.keyUp("ArrowUp");
    keys.keyUp("ArrowRight");
    expect(keys.desiredVelocity()).toEqual([0, 0]);
  });
});
