// Session driver: executes the full trial flow over a line channel and keeps
// a ClientView current. One input frame goes out per received snapshot, so
// outbound traffic is rate-limited to the snapshot rate and always carries
// the latest input state.

import {
  Inbox,
  Outbox,
  SessionConfig,
  Snapshot,
  WireMessage,
  decodeFrame,
  encodeFrame,
} from "./protocol.js";
import { LineChannel } from "./transport.js";
import { ClientView } from "./view.js";

export interface SessionResult {
  sessionId: string;
  trialsCompleted: number;
  preference: string;
}

export interface SessionOptions {
  /** desired velocity to send with the next input frame */
  inputSource: () => [number, number];
  /** answer the final two-alternative question */
  choosePreference: (choices: string[]) => string | Promise<string>;
  view?: ClientView;
  profile?: Record<string, unknown>;
  resume?: string;
  lockstep?: boolean;
  viewHeading?: () => number | null;
  onEvent?: (msg: WireMessage) => void;
}

export class SessionClient {
  readonly view: ClientView;
  private outbox = new Outbox("");
  private inbox = new Inbox();
  private trialsCompleted = 0;
  private sessionId = "";
  private preference = "";

  constructor(private channel: LineChannel, private opts: SessionOptions) {
    this.view = opts.view ?? new ClientView();
  }

  run(): Promise<SessionResult> {
    return new Promise((resolve, reject) => {
      this.channel.onClose(() => reject(new Error("connection closed before bye")));
      this.channel.onLine((line) => {
        let msg: WireMessage;
        try {
          msg = this.inbox.accept(decodeFrame(line));
        } catch (err) {
          this.channel.close();
          reject(err);
          return;
        }
        this.dispatch(msg).then(
          (done) => {
            if (done) resolve(done);
          },
          (err) => {
            this.channel.close();
            reject(err);
          }
        );
      });
      const hello: Record<string, unknown> = {};
      if (this.opts.profile) hello.profile = this.opts.profile;
      if (this.opts.resume) hello.resume = this.opts.resume;
      if (this.opts.lockstep !== undefined) hello.lockstep = this.opts.lockstep;
      this.channel.send(encodeFrame(this.outbox.make("hello", hello)));
    });
  }

  private async dispatch(msg: WireMessage): Promise<SessionResult | null> {
    switch (msg.type) {
      case "session_config": {
        const config = msg as SessionConfig;
        this.sessionId = config.session;
        this.view.scene = config.scene;
        this.view.horizon = config.horizon;
        this.view.respondent = config.respondent;
        break;
      }
      case "snapshot": {
        this.view.pushSnapshot(msg as Snapshot, Date.now());
        const [vx, vy] = this.opts.inputSource();
        const input: Record<string, unknown> = { v: [vx, vy] };
        const gaze = this.opts.viewHeading?.();
        if (gaze !== null && gaze !== undefined) input.view_heading = gaze;
        this.channel.send(encodeFrame(this.outbox.make("input", input)));
        break;
      }
      case "event": {
        const kind = msg.kind as string;
        if (kind === "trial_started") {
          this.view.trialStarted(msg.trial as number, msg.scenario as string, msg.horizon as number);
        } else if (kind === "trial_ended") {
          this.trialsCompleted += 1;
          this.view.trialEnded(msg.result as string);
        } else if (kind === "accident") {
          this.view.accidentHappened();
        }
        this.opts.onEvent?.(msg);
        break;
      }
      case "prompt": {
        const choices = (msg.choices as string[]) ?? ["current", "av"];
        this.view.showPrompt(choices);
        const choice = await this.opts.choosePreference(choices);
        this.preference = choice;
        this.channel.send(encodeFrame(this.outbox.make("preference", { choice })));
        break;
      }
      case "bye": {
        this.channel.onClose(() => {});
        this.channel.close();
        return {
          sessionId: this.sessionId,
          trialsCompleted: this.trialsCompleted,
          preference: this.preference,
        };
      }
      default:
        break;
    }
    return null;
  }
}
