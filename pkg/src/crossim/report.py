"""Figure rendering for batch runs, estimation reports and benchmarks.

Every CLI report path drops PNG figures next to its delimited output files.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .choice import EstimationResult
from .scene import Scene
from .tracking import TrajectoryLog


def draw_scene(ax, scene: Scene, window: float = 60.0) -> None:
    """Top-down scene geometry around the first crossing."""
    for link in scene.links:
        pts = np.asarray(link.centerline)
        d = pts[-1] - pts[0]
        d = d / np.linalg.norm(d)
        n = np.array([-d[1], d[0]]) * link.width / 2.0
        band = np.vstack([pts[0] + n, pts[-1] + n, pts[-1] - n, pts[0] - n])
        ax.fill(band[:, 0], band[:, 1], color="0.85", zorder=0)
        ax.plot(pts[:, 0], pts[:, 1], color="0.6", lw=0.6, ls="--", zorder=1)
    for cw in scene.crosswalks:
        poly = np.asarray(cw.polygon)
        ax.fill(poly[:, 0], poly[:, 1], color="#f2e29b", alpha=0.8, zorder=2)
        ax.plot(*cw.entry_anchor, marker="v", color="k", ms=5, zorder=5)
        ax.plot(*cw.exit_anchor, marker="^", color="k", ms=5, zorder=5)
    if scene.walk_area:
        wa = np.asarray(scene.walk_area)
        ax.fill(wa[:, 0], wa[:, 1], color="#cfe5cf", alpha=0.5, zorder=0)
    if scene.crosswalks:
        cx, cy = scene.crosswalks[0].entry_anchor
        ax.set_xlim(cx - window, cx + window)
        ax.set_ylim(cy - 12, cy + 16)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")


def plot_trial(log: TrajectoryLog, scene: Scene, path, title: Optional[str] = None) -> None:
    """Respondent path over the scene with background traffic traces."""
    fig, ax = plt.subplots(figsize=(9, 4))
    draw_scene(ax, scene)
    rid = log.header.get("respondent")
    by_agent: dict[int, list] = {}
    for s in log.samples:
        by_agent.setdefault(s.agent_id, []).append(s)
    for agent_id, samples in sorted(by_agent.items()):
        xs = [s.x for s in samples]
        ys = [s.y for s in samples]
        if agent_id == rid:
            ts = [s.t for s in samples]
            pts = ax.scatter(xs, ys, c=ts, s=4, cmap="viridis", zorder=6)
            fig.colorbar(pts, ax=ax, label="t [s]")
        else:
            ax.plot(xs, ys, color="tab:red", lw=0.5, alpha=0.4, zorder=3)
    for ev in log.events:
        if ev.kind == "accident":
            sample = next((s for s in log.samples if s.agent_id == rid and s.t >= ev.t), None)
            if sample:
                ax.plot(sample.x, sample.y, marker="x", color="red", ms=12, mew=3, zorder=7)
    ax.set_title(title or f"trial {log.header.get('trial')} ({log.header.get('scenario')})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_outcomes(sessions: Sequence, path) -> None:
    """Outcome counts and wait-time distribution across a batch."""
    results: dict[str, int] = {}
    waits = []
    for s in sessions:
        for o in s.outcomes:
            results[o.result] = results.get(o.result, 0) + 1
            waits.append(o.wait_time)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    keys = sorted(results)
    ax1.bar(keys, [results[k] for k in keys], color=["tab:green", "tab:red", "tab:gray"][: len(keys)])
    ax1.set_ylabel("trials")
    ax1.set_title("trial outcomes")
    if waits:
        ax2.hist(waits, bins=24, color="tab:blue", alpha=0.8)
    ax2.set_xlabel("wait time [s]")
    ax2.set_title("waiting before crossing")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_shares(shares: dict[str, float], path) -> None:
    """Share choosing the hypothetical alternative, per survey instrument."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = list(shares)
    vals = [100.0 * shares[n] for n in names]
    ax.bar(names, vals, color="tab:purple", alpha=0.85)
    ax.axhline(50, color="0.4", lw=0.8, ls=":")
    ax.set_ylabel("% choosing the automated-traffic layout")
    ax.set_ylim(0, 100)
    for i, v in enumerate(vals):
        ax.text(i, v + 2, f"{v:.0f}%", ha="center")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_estimation(result: EstimationResult, path, title: str = "choice model estimates") -> None:
    """Coefficients with 95% intervals; scales listed alongside."""
    fig, ax = plt.subplots(figsize=(6, 0.6 * len(result.beta_names) + 2))
    y = np.arange(len(result.beta_names))[::-1]
    ax.errorbar(result.beta, y, xerr=1.96 * result.beta_se, fmt="o", color="tab:blue", capsize=3)
    ax.axvline(0, color="0.4", lw=0.8)
    ax.set_yticks(y)
    ax.set_yticklabels(result.beta_names)
    lines = [f"LL {result.loglik:.2f}", f"rho2 {result.rho_sq:.3f}", f"n {result.n_obs}"]
    for name, m, se in zip(result.scale_names, result.scales, result.scale_se):
        lines.append(f"scale[{name}] {m:.3f}" + ("" if math.isnan(se) else f" ({se:.3f})"))
    ax.text(
        0.98, 0.02, "\n".join(lines), transform=ax.transAxes,
        ha="right", va="bottom", fontsize=8, family="monospace",
    )
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(per_second: Sequence[float], target: float, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(per_second) + 1), per_second, marker="o", color="tab:blue")
    ax.axhline(target, color="tab:red", ls="--", label=f"target {target:.0f} steps/s")
    ax.set_xlabel("wall-clock second")
    ax.set_ylabel("steps/s")
    ax.set_ylim(bottom=0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
