// End-to-end: a scripted headless client completes the full two-scenario,
// ten-trial session against the real python service over TCP, submits a
// preference, and the persisted server-side log matches a batch replay of
// the same inputs byte for byte.

import { execFile, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, readdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { promisify } from "node:util";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { SessionClient } from "../src/client.js";
import { connectTcp } from "../src/transport.js";

const execFileAsync = promisify(execFile);
const HERE = dirname(fileURLToPath(import.meta.url));

const PORT = 8473;
const SEED = 5;
const HORIZON = 15;
const INPUT: [number, number] = [0.3, 1.2];

let server: ChildProcess;
let outDir: string;

beforeAll(async () => {
  outDir = mkdtempSync(join(tmpdir(), "crossim-e2e-"));
  server = spawn(
    "python3",
    [
      "-u", "-m", "crossim.cli", "serve",
      "--turbo",
      "--seed", String(SEED),
      "--horizon", String(HORIZON),
      "--port", String(PORT),
      "--out", outDir,
    ],
    { stdio: ["ignore", "pipe", "pipe"] }
  );
  await new Promise<void>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("server did not start")), 30_000);
    server.stdout!.on("data", (chunk: Buffer) => {
      if (chunk.toString().includes("listening on")) {
        clearTimeout(timer);
        resolve();
      }
    });
    server.stderr!.on("data", (chunk: Buffer) => process.stderr.write(chunk));
    server.on("exit", () => reject(new Error("server exited early")));
  });
});

afterAll(() => {
  server?.kill();
});

describe("full session over the wire", () => {
  it("runs 2 scenarios x 10 trials, submits a preference, logs match batch replay", async () => {
    const channel = await connectTcp("127.0.0.1", PORT);
    const client = new SessionClient(channel, {
      lockstep: true,
      inputSource: () => INPUT,
      choosePreference: () => "av",
      viewHeading: () => 0.9,
    });
    const result = await client.run();

    expect(result.sessionId).toBe("s0001");
    expect(result.trialsCompleted).toBe(20);
    expect(result.preference).toBe("av");
    expect(client.view.prompt.visible).toBe(true);

    // the service persisted one log per trial plus the session summary
    const files = readdirSync(outDir).sort();
    const logs = files.filter((f) => f.startsWith("s0001_") && f.endsWith(".jsonl"));
    expect(logs.length).toBe(20);
    expect(files).toContain("sessions.jsonl");
    const summary = JSON.parse(readFileSync(join(outDir, "sessions.jsonl"), "utf-8"));
    expect(summary.preference).toBe("av");
    expect(summary.outcomes.length).toBe(20);

    // server-side log vs batch replay with identical inputs at identical ticks
    const logPath = join(outDir, "s0001_b_unsignalized_av_0.jsonl");
    const { stdout } = await execFileAsync("python3", [
      join(HERE, "replay_check.py"),
      logPath,
      "s0001",
      "b_unsignalized_av",
      "0",
      String(INPUT[0]),
      String(INPUT[1]),
      String(SEED),
      String(HORIZON),
      "0.9",
    ]);
    expect(stdout.trim()).toBe("MATCH");
  });
});
