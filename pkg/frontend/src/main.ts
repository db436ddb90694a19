// Browser entry: connect through a TCP-to-WebSocket bridge, steer the
// pedestrian with arrows/WASD, answer the final question with 1/2.

import { SessionClient } from "./client.js";
import { KeyboardInput } from "./keyboard.js";
import { render } from "./render.js";
import { WebSocketLineChannel } from "./transport.js";

function bridgeUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("server") ?? "ws://127.0.0.1:8451";
}

async function start(): Promise<void> {
  const canvas = document.getElementById("stage") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const keys = new KeyboardInput();
  keys.attach(window as unknown as { addEventListener(type: string, cb: (ev: KeyboardEvent) => void): void });

  let pendingChoice: ((choice: string) => void) | null = null;
  window.addEventListener("keydown", (ev) => {
    if (!pendingChoice) return;
    if (ev.key === "1") pendingChoice("current");
    if (ev.key === "2") pendingChoice("av");
  });

  const ws = new WebSocket(bridgeUrl());
  await new Promise<void>((resolve, reject) => {
    ws.onopen = () => resolve();
    ws.onerror = () => reject(new Error(`cannot reach ${bridgeUrl()}`));
  });
  const client = new SessionClient(new WebSocketLineChannel(ws), {
    inputSource: () => keys.desiredVelocity(),
    choosePreference: (choices) =>
      new Promise<string>((resolve) => {
        pendingChoice = (choice) => {
          pendingChoice = null;
          resolve(choice);
        };
        void choices;
      }),
  });

  const loop = () => {
    render(client.view, ctx, Date.now());
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);

  const result = await client.run();
  const note = document.getElementById("note")!;
  note.textContent = `session ${result.sessionId} complete — preference: ${result.preference}`;
}

start().catch((err) => {
  const note = document.getElementById("note");
  if (note) note.textContent = String(err);
});
