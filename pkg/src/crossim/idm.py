"""Intelligent Driver Model car-following acceleration (scalar reference form)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class IdmParams:
    v0: float = 13.89        # desired speed, m/s
    T: float = 1.5           # safe time headway, s
    a: float = 1.4           # maximum acceleration, m/s^2
    b: float = 2.0           # comfortable deceleration, m/s^2
    s0: float = 2.0          # jam distance, m
    delta: float = 4.0       # acceleration exponent
    b_emergency: float = 8.0  # physical braking limit, m/s^2

    def __post_init__(self):
        for name in ("v0", "T", "a", "b", "s0", "delta", "b_emergency"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"IdmParams.{name} must be > 0")
        if self.b_emergency < self.b:
            raise ValueError("IdmParams.b_emergency must be >= b")


@dataclass(frozen=True)
class GapObservation:
    """What a follower knows about its leader.

    gap is bumper-to-bumper (m), approach_speed is own speed minus leader
    speed (m/s, positive when closing).
    """

    gap: float
    leader_speed: float
    approach_speed: float


def desired_gap(v: float, approach_speed: float, p: IdmParams) -> float:
    return p.s0 + v * p.T + v * approach_speed / (2.0 * math.sqrt(p.a * p.b))


def idm_acceleration(v: float, leader: Optional[GapObservation], p: IdmParams) -> float:
    """Acceleration of a vehicle at speed v, clamped to [-b_emergency, a].

    With no leader this reduces to the free-road term a*(1 - (v/v0)^delta).
    """
    v = max(v, 0.0)
    value = 1.0 - (v / p.v0) ** p.delta
    if leader is not None:
        s = max(leader.gap, 1e-9)
        value -= (desired_gap(v, leader.approach_speed, p) / s) ** 2
    return min(max(p.a * value, -p.b_emergency), p.a)
