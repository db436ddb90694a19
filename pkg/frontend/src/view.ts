// Client-side view state: a two-snapshot interpolation buffer, the local
// input state, and the trial/prompt banners. Rendered poses interpolate
// between received snapshots only; when the stream stalls the agents freeze
// at the last interpolated pose and a stall indicator is shown.

import { AgentSnapshot, SceneDocument, Snapshot } from "./protocol.js";

export interface BannerState {
  trial: number | null;
  scenario: string | null;
  result: string | null;
  accident: boolean;
  countdown: number | null;
}

export interface PromptState {
  choices: string[];
  visible: boolean;
}

export class ClientView {
  scene: SceneDocument | null = null;
  horizon = 120;
  respondent = 1;
  private previous: Snapshot | null = null;
  private latest: Snapshot | null = null;
  private latestArrivalMs = 0;
  /** wall-clock ms between the last two snapshots, for interpolation pacing */
  private intervalMs = 1000 / 30;
  banner: BannerState = { trial: null, scenario: null, result: null, accident: false, countdown: null };
  prompt: PromptState = { choices: [], visible: false };
  stalled = false;

  pushSnapshot(snap: Snapshot, nowMs: number): void {
    if (this.latest !== null) {
      this.previous = this.latest;
      const dt = nowMs - this.latestArrivalMs;
      if (dt > 0 && dt < 1000) this.intervalMs = dt;
    }
    this.latest = snap;
    this.latestArrivalMs = nowMs;
    this.stalled = false;
    if (this.banner.trial !== null) {
      this.banner.countdown = Math.max(0, this.horizon - snap.t);
    }
  }

  trialStarted(trial: number, scenario: string, horizon: number): void {
    this.banner = { trial, scenario, result: null, accident: false, countdown: horizon };
    this.horizon = horizon;
    this.previous = null;
    this.latest = null;
  }

  trialEnded(result: string): void {
    this.banner.result = result;
    if (result === "accident") this.banner.accident = true;
  }

  accidentHappened(): void {
    this.banner.accident = true;
  }

  showPrompt(choices: string[]): void {
    this.prompt = { choices, visible: true };
  }

  /**
   * Poses for rendering at wall-clock `nowMs`: linear interpolation between
   * the two buffered snapshots, never extrapolating more than one snapshot
   * interval beyond the latest.
   */
  poses(nowMs: number): AgentSnapshot[] {
    if (this.latest === null) return [];
    if (this.previous === null) return this.latest.agents;
    const age = nowMs - this.latestArrivalMs;
    if (age > this.intervalMs) {
      this.stalled = age > 3 * this.intervalMs;
      return this.latest.agents; // freeze at the last received pose
    }
    // previous pose corresponds to "one interval ago"
    const alpha = Math.min(Math.max(age / this.intervalMs, 0), 1);
    const prevById = new Map(this.previous.agents.map((a) => [a.id, a]));
    return this.latest.agents.map((a) => {
      const p = prevById.get(a.id);
      if (!p) return a;
      return {
        ...a,
        x: p.x + (a.x - p.x) * alpha,
        y: p.y + (a.y - p.y) * alpha,
      };
    });
  }

  get signal(): string | null {
    return this.latest ? this.latest.signal : null;
  }

  get time(): number | null {
    return this.latest ? this.latest.t : null;
  }
}
