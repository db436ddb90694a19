// Held arrow/WASD keys become a desired walking velocity. Holding shift or
// any other modifier does not enable running; the cap is enforced server-side
// regardless.

import { WALK_SPEED, clampSpeed } from "./protocol.js";

const KEY_VECTORS: Record<string, [number, number]> = {
  ArrowUp: [0, 1],
  ArrowDown: [0, -1],
  ArrowLeft: [-1, 0],
  ArrowRight: [1, 0],
  KeyW: [0, 1],
  KeyS: [0, -1],
  KeyA: [-1, 0],
  KeyD: [1, 0],
};

export class KeyboardInput {
  private held = new Set<string>();

  keyDown(code: string): void {
    if (code in KEY_VECTORS) this.held.add(code);
  }

  keyUp(code: string): void {
    this.held.delete(code);
  }

  clear(): void {
    this.held.clear();
  }

  /** Latest desired velocity from the held keys (last-writer-wins on send). */
  desiredVelocity(): [number, number] {
    let x = 0;
    let y = 0;
    for (const code of this.held) {
      const [dx, dy] = KEY_VECTORS[code];
      x += dx;
      y += dy;
    }
    const mag = Math.hypot(x, y);
    if (mag === 0) return [0, 0];
    return clampSpeed((x / mag) * WALK_SPEED, (y / mag) * WALK_SPEED);
  }

  attach(target: { addEventListener(type: string, cb: (ev: KeyboardEvent) => void): void }): void {
    target.addEventListener("keydown", (ev) => this.keyDown(ev.code));
    target.addEventListener("keyup", (ev) => this.keyUp(ev.code));
  }
}
