import { describe, expect, it } from "vitest";

import {
  Inbox,
  Outbox,
  Snapshot,
  clampSpeed,
  decodeFrame,
  encodeFrame,
} from "../src/protocol.js";

describe("frame codec", () => {
  it("round-trips a message", () => {
    const out = new Outbox("s1");
    const msg = out.make("input", { v: [0.3, 1.2] });
    expect(decodeFrame(encodeFrame(msg).trim())).toEqual(msg);
  });

  it("rejects unknown types", () => {
    expect(() => encodeFrame({ type: "warp", session: "", seq: 0 } as never)).toThrow();
    expect(() => decodeFrame('{"type":"warp","seq":0}')).toThrow();
  });
});

describe("sequence bookkeeping", () => {
  it("stamps outbound frames monotonically", () => {
    const out = new Outbox("");
    expect(out.make("hello").seq).toBe(0);
    expect(out.make("input").seq).toBe(1);
  });

  it("rejects inbound sequence regressions", () => {
    const inbox = new Inbox();
    inbox.accept({ type: "event", session: "s", seq: 0 });
    inbox.accept({ type: "event", session: "s", seq: 3 });
    expect(() => inbox.accept({ type: "event", session: "s", seq: 3 })).toThrow(/backwards/);
  });

  it("requires gap-free snapshot counters", () => {
    const inbox = new Inbox();
    const snap = (seq: number, snapNo: number): Snapshot =>
      ({ type: "snapshot", session: "s", seq, snap: snapNo, t: 0, tick: 0, signal: null, agents: [] });
    inbox.accept(snap(0, 0));
    inbox.accept(snap(1, 1));
    expect(() => inbox.accept(snap(2, 3))).toThrow(/gap/);
  });
});

describe("speed cap", () => {
  it("never lets the respondent run", () => {
    const [vx, vy] = clampSpeed(5.0, 0.0);
    expect(Math.hypot(vx, vy)).toBeCloseTo(2.0, 10);
    expect(clampSpeed(0.4, 0.3)).toEqual([0.4, 0.3]);
  });
});
