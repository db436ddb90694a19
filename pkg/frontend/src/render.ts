// Top-down 2-D rendering of the intersection and agents. The drawing surface
// is a minimal structural subset of CanvasRenderingContext2D so tests can
// pass a recording stub.

import { AgentSnapshot } from "./protocol.js";
import { ClientView } from "./view.js";

export interface Surface {
  canvas: { width: number; height: number };
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  textAlign: string;
  save(): void;
  restore(): void;
  translate(x: number, y: number): void;
  scale(x: number, y: number): void;
  rotate(rad: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  rect(x: number, y: number, w: number, h: number): void;
  fill(): void;
  stroke(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

export const VEHICLE_LENGTH = 4.5;
export const VEHICLE_WIDTH = 1.8;
export const CYCLIST_LENGTH = 1.8;
export const CYCLIST_WIDTH = 0.6;
export const PEDESTRIAN_RADIUS = 0.25;

export const KIND_COLORS: Record<AgentSnapshot["kind"], string> = {
  vehicle_human: "#8a8f98",
  vehicle_autonomous: "#3a7bd5",
  pedestrian: "#e4572e",
  cyclist: "#17a398",
};

const PIXELS_PER_METRE = 9;

function polygon(ctx: Surface, pts: [number, number][]): void {
  ctx.beginPath();
  ctx.moveTo(pts[0][0], pts[0][1]);
  for (let i = 1; i < pts.length; i++) ctx.lineTo(pts[i][0], pts[i][1]);
  ctx.closePath();
}

function drawAgent(ctx: Surface, agent: AgentSnapshot): void {
  ctx.save();
  ctx.translate(agent.x, agent.y);
  ctx.fillStyle = KIND_COLORS[agent.kind];
  if (agent.kind === "pedestrian") {
    ctx.beginPath();
    ctx.arc(0, 0, PEDESTRIAN_RADIUS * 1.6, 0, 2 * Math.PI);
    ctx.fill();
  } else {
    ctx.rotate(agent.heading);
    const [l, w] =
      agent.kind === "cyclist" ? [CYCLIST_LENGTH, CYCLIST_WIDTH] : [VEHICLE_LENGTH, VEHICLE_WIDTH];
    ctx.beginPath();
    ctx.rect(-l / 2, -w / 2, l, w);
    ctx.fill();
    if (agent.kind === "vehicle_autonomous") {
      // sensor dome marks the automated fleet
      ctx.fillStyle = "#dbe9ff";
      ctx.beginPath();
      ctx.arc(0, 0, 0.45, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
  ctx.restore();
}

/** Draw one frame: scene geometry, agents, signal, countdown, banners. */
export function render(view: ClientView, ctx: Surface, nowMs: number): void {
  const { width, height } = ctx.canvas;
  ctx.fillStyle = "#f4f2ec";
  ctx.fillRect(0, 0, width, height);
  if (!view.scene) {
    ctx.fillStyle = "#444";
    ctx.font = "16px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText("waiting for session…", width / 2, height / 2);
    return;
  }
  const focus = view.scene.crosswalks[0]?.entry_anchor ?? [0, 0];
  ctx.save();
  // world-to-screen: metres to pixels, y up, centred on the crossing
  ctx.translate(width / 2, height / 2);
  ctx.scale(PIXELS_PER_METRE, -PIXELS_PER_METRE);
  ctx.translate(-focus[0], -(focus[1] + 1.0));

  if (view.scene.walk_area.length >= 3) {
    ctx.fillStyle = "#d9e8d5";
    polygon(ctx, view.scene.walk_area);
    ctx.fill();
  }
  for (const link of view.scene.links) {
    const [a, b] = [link.centerline[0], link.centerline[link.centerline.length - 1]];
    const ang = Math.atan2(b[1] - a[1], b[0] - a[0]);
    const half = (link.lane_count * link.lane_width) / 2;
    const nx = -Math.sin(ang) * half;
    const ny = Math.cos(ang) * half;
    ctx.fillStyle = "#c8c8c8";
    polygon(ctx, [
      [a[0] + nx, a[1] + ny],
      [b[0] + nx, b[1] + ny],
      [b[0] - nx, b[1] - ny],
      [a[0] - nx, a[1] - ny],
    ]);
    ctx.fill();
  }
  for (const cw of view.scene.crosswalks) {
    ctx.fillStyle = "#efe3a7";
    polygon(ctx, cw.polygon);
    ctx.fill();
  }
  for (const agent of view.poses(nowMs)) {
    drawAgent(ctx, agent);
  }
  ctx.restore();

  // pedestrian signal head
  const signal = view.signal;
  if (signal !== null) {
    ctx.fillStyle = "#222";
    ctx.fillRect(width - 64, 12, 52, 46);
    ctx.fillStyle = signal === "walk_green" ? "#2ecc40" : "#ff4136";
    ctx.beginPath();
    ctx.arc(width - 38, 35, 14, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#fff";
    ctx.font = "10px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(signal === "walk_green" ? "WALK" : "WAIT", width - 38, 52);
  }

  ctx.fillStyle = "#222";
  ctx.font = "14px sans-serif";
  ctx.textAlign = "left";
  if (view.banner.trial !== null) {
    const scenario = view.banner.scenario ?? "";
    ctx.fillText(`trial ${view.banner.trial + 1} — ${scenario}`, 12, 22);
    if (view.banner.countdown !== null) {
      ctx.fillText(`time left: ${view.banner.countdown.toFixed(0)} s`, 12, 40);
    }
  }
  if (view.stalled) {
    ctx.fillStyle = "#b36b00";
    ctx.fillText("connection stalled…", 12, height - 14);
  }
  if (view.banner.accident) {
    ctx.fillStyle = "rgba(160, 20, 20, 0.86)";
    ctx.fillRect(width / 2 - 150, height / 2 - 34, 300, 68);
    ctx.fillStyle = "#fff";
    ctx.font = "20px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText("An accident has happened", width / 2, height / 2 + 6);
  } else if (view.banner.result && view.banner.result !== "accident") {
    ctx.fillStyle = "#222";
    ctx.textAlign = "center";
    ctx.fillText(`trial over: ${view.banner.result}`, width / 2, 22);
  }
  if (view.prompt.visible) {
    ctx.fillStyle = "rgba(30, 30, 30, 0.9)";
    ctx.fillRect(width / 2 - 190, height / 2 - 50, 380, 100);
    ctx.fillStyle = "#fff";
    ctx.font = "15px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText("Which street would you rather cross?", width / 2, height / 2 - 18);
    ctx.fillText(
      view.prompt.choices.map((c, i) => `[${i + 1}] ${c}`).join("    "),
      width / 2,
      height / 2 + 16
    );
  }
}
