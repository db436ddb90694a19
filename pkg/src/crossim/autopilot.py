"""Synthetic respondent: a gap-acceptance crossing controller.

Exists to automate batch experiments and to drive test harnesses; it is not
a behavioural model of real pedestrians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .scene import WALK_GREEN

GO = "GO"
WAIT = "WAIT"

STATION_KEEPING_DIST = 0.3  # m, drift beyond this walks the agent back to its post


@dataclass(frozen=True)
class GapAcceptanceParams:
    critical_gap: float = 4.8   # both standard safe gaps (5 s, 7 s) are accepted
    walk_speed: float = 1.4
    signal_compliant: bool = True
    jaywalk_threshold: Optional[float] = None  # crossing-on-red gap for non-compliant agents

    def __post_init__(self):
        if self.critical_gap <= 0.0:
            raise ValueError("critical_gap must be > 0")
        if self.walk_speed <= 0.0:
            raise ValueError("walk_speed must be > 0")


@dataclass(frozen=True)
class Approaching:
    """An upstream vehicle on a conflicting lane."""

    distance: float  # m to its conflict-zone entry
    speed: float     # m/s


def available_gap(approaching: Sequence[Approaching]) -> float:
    """Time for the nearest approaching vehicle to reach the conflict zone.

    Stationary vehicles never arrive, so their gap is infinite.
    """
    nearest = None
    for veh in approaching:
        if veh.distance < 0.0:
            continue
        if nearest is None or veh.distance < nearest.distance:
            nearest = veh
    if nearest is None or nearest.speed <= 0.05:
        return math.inf
    return nearest.distance / nearest.speed


def decide(
    approaching: Sequence[Approaching],
    signal: Optional[str],
    p: GapAcceptanceParams,
) -> str:
    """GO or WAIT for a pedestrian standing at the crossing entry.

    `signal` is the current phase indicator, or None at an unsignalized
    crossing. A gap exactly equal to the critical gap resolves to GO.
    """
    gap = available_gap(approaching)
    if signal is None:
        permitted = True
    elif signal == WALK_GREEN:
        permitted = True
    elif not p.signal_compliant and p.jaywalk_threshold is not None:
        permitted = gap >= p.jaywalk_threshold
    else:
        permitted = False
    return GO if (permitted and gap >= p.critical_gap) else WAIT


def control(
    position: tuple[float, float],
    decision: str,
    entry_anchor: tuple[float, float],
    exit_anchor: tuple[float, float],
    p: GapAcceptanceParams,
    v_max: float = 2.0,
) -> tuple[float, float]:
    """Desired velocity for the decision: hold the entry anchor or walk to the exit."""
    speed = min(p.walk_speed, v_max)
    if decision == GO:
        dx = exit_anchor[0] - position[0]
        dy = exit_anchor[1] - position[1]
        d = math.hypot(dx, dy)
        if d < 1e-9:
            return (0.0, 0.0)
        return (speed * dx / d, speed * dy / d)
    # WAIT: zero at the anchor; walk back if traffic has nudged us off it
    dx = entry_anchor[0] - position[0]
    dy = entry_anchor[1] - position[1]
    d = math.hypot(dx, dy)
    if d <= STATION_KEEPING_DIST:
        return (0.0, 0.0)
    return (speed * dx / d, speed * dy / d)
