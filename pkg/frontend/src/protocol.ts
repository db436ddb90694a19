// Wire protocol shared with the session server: one JSON frame per line,
// per-direction monotonic sequence numbers, gap-free snapshot counters.

export type MessageType =
  | "hello"
  | "session_config"
  | "snapshot"
  | "input"
  | "event"
  | "prompt"
  | "preference"
  | "bye";

export interface WireMessage {
  type: MessageType;
  session: string;
  seq: number;
  [key: string]: unknown;
}

export interface AgentSnapshot {
  id: number;
  kind: "vehicle_human" | "vehicle_autonomous" | "pedestrian" | "cyclist";
  x: number;
  y: number;
  vx: number;
  vy: number;
  heading: number;
}

export interface Snapshot extends WireMessage {
  type: "snapshot";
  snap: number;
  t: number;
  tick: number;
  signal: string | null;
  agents: AgentSnapshot[];
}

export interface SessionConfig extends WireMessage {
  type: "session_config";
  dt: number;
  snapshot_every: number;
  trials: number;
  scenarios: string[];
  horizon: number;
  lockstep: boolean;
  respondent: number;
  scene: SceneDocument;
  resume_at: { scenario: number; trial: number };
}

export interface SceneDocument {
  nodes: { id: string; position: [number, number] }[];
  links: {
    id: string;
    lane_count: number;
    lane_width: number;
    centerline: [number, number][];
  }[];
  crosswalks: {
    id: string;
    polygon: [number, number][];
    entry_anchor: [number, number];
    exit_anchor: [number, number];
  }[];
  walk_area: [number, number][];
}

const MESSAGE_TYPES: ReadonlySet<string> = new Set([
  "hello",
  "session_config",
  "snapshot",
  "input",
  "event",
  "prompt",
  "preference",
  "bye",
]);

export function encodeFrame(msg: WireMessage): string {
  if (!MESSAGE_TYPES.has(msg.type)) {
    throw new Error(`unknown message type ${msg.type}`);
  }
  return JSON.stringify(msg) + "\n";
}

export function decodeFrame(line: string): WireMessage {
  const msg = JSON.parse(line) as WireMessage;
  if (typeof msg !== "object" || msg === null || !MESSAGE_TYPES.has(msg.type)) {
    throw new Error(`unknown message type in frame: ${line.slice(0, 80)}`);
  }
  return msg;
}

/** Stamps outbound frames with increasing sequence numbers. */
export class Outbox {
  private seq = 0;
  constructor(private session = "") {}

  make(type: MessageType, payload: Record<string, unknown> = {}): WireMessage {
    return { type, session: this.session, seq: this.seq++, ...payload };
  }
}

/** Checks inbound sequence and snapshot counters stay monotonic/gap-free. */
export class Inbox {
  private lastSeq = -1;
  private lastSnap = -1;

  accept(msg: WireMessage): WireMessage {
    const seq = msg.seq;
    if (typeof seq !== "number" || seq <= this.lastSeq) {
      throw new Error(`sequence number went backwards: ${seq} after ${this.lastSeq}`);
    }
    this.lastSeq = seq;
    if (msg.type === "snapshot") {
      const snap = (msg as Snapshot).snap;
      if (snap !== this.lastSnap + 1) {
        throw new Error(`snapshot counter gap: ${snap} after ${this.lastSnap}`);
      }
      this.lastSnap = snap;
    }
    return msg;
  }
}

export const WALK_SPEED = 1.4; // m/s, desired walking pace
export const SPEED_CAP = 2.0; // m/s, enforced server-side regardless

export function clampSpeed(vx: number, vy: number, cap = SPEED_CAP): [number, number] {
  const mag = Math.hypot(vx, vy);
  if (mag <= cap || mag === 0) return [vx, vy];
  return [(vx * cap) / mag, (vy * cap) / mag];
}
