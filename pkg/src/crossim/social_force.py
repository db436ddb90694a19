"""Goal-driven walking model: relaxation toward a desired velocity plus
exponential repulsion from other agents and obstacles, with separate
interaction constants per source kind (pedestrian, obstacle, vehicle, cyclist).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

Point2 = tuple[float, float]

# bounding shapes shared with the simulation engine
VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 1.8
CYCLIST_LENGTH = 1.8
CYCLIST_WIDTH = 0.6
PEDESTRIAN_RADIUS = 0.25   # 0.5 m diameter disc
CYCLIST_RADIUS = 0.3       # disc used for repulsion range

SOURCE_KINDS = ("pedestrian", "obstacle", "vehicle", "cyclist")

# vehicle repulsion is stronger and longer-ranged than the pedestrian term so
# that walkers keep clear of moving traffic
DEFAULT_STRENGTH = {"pedestrian": 2.1, "obstacle": 10.0, "vehicle": 15.0, "cyclist": 5.0}
DEFAULT_RANGE = {"pedestrian": 0.3, "obstacle": 0.2, "vehicle": 1.0, "cyclist": 0.6}


@dataclass(frozen=True)
class SocialForceParams:
    tau: float = 0.5     # relaxation time, s
    v_max: float = 2.0   # hard speed cap, m/s
    strength: dict = field(default_factory=lambda: dict(DEFAULT_STRENGTH))  # A, m/s^2
    reach: dict = field(default_factory=lambda: dict(DEFAULT_RANGE))        # B, m

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError("SocialForceParams.tau must be > 0")
        for kind in SOURCE_KINDS:
            if self.strength.get(kind, 0.0) <= 0.0 or self.reach.get(kind, 0.0) <= 0.0:
                raise ValueError(f"SocialForceParams: A and B must be > 0 for {kind!r}")


# cyclists ride faster and are allowed a higher cap; there is no dedicated
# cyclist flow model, they reuse the walking dynamics
CYCLIST_FORCE_PARAMS = SocialForceParams(tau=0.5, v_max=8.0)
PEDESTRIAN_DESIRED_SPEED = 1.34
CYCLIST_DESIRED_SPEED = 4.2


@dataclass(frozen=True)
class ForceSource:
    """A repulsion source as seen by one walker."""

    kind: str            # pedestrian | obstacle | vehicle | cyclist
    position: Point2     # agent centre, or nearest obstacle boundary point
    heading: float = 0.0  # used for the vehicle rectangle


def nearest_point_on_rect(point: Point2, center: Point2, heading: float,
                          half_length: float, half_width: float) -> Point2:
    """Closest point on an oriented rectangle's boundary region to `point`."""
    c, s = math.cos(heading), math.sin(heading)
    dx, dy = point[0] - center[0], point[1] - center[1]
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    qx = min(max(lx, -half_length), half_length)
    qy = min(max(ly, -half_width), half_width)
    return (center[0] + c * qx - s * qy, center[1] + s * qx + c * qy)


def _repulsion(position: Point2, radius: float, source: ForceSource,
               p: SocialForceParams) -> tuple[float, float]:
    if source.kind == "vehicle":
        ref = nearest_point_on_rect(position, source.position, source.heading,
                                    VEHICLE_LENGTH / 2.0, VEHICLE_WIDTH / 2.0)
        r = radius
    elif source.kind == "cyclist":
        ref = source.position
        r = radius + CYCLIST_RADIUS
    elif source.kind == "pedestrian":
        ref = source.position
        r = radius + PEDESTRIAN_RADIUS
    else:  # obstacle boundary point
        ref = source.position
        r = radius
    dx, dy = position[0] - ref[0], position[1] - ref[1]
    d = math.hypot(dx, dy)
    if d < 1e-9:
        return (0.0, 0.0)  # overlapping; direction undefined
    mag = p.strength[source.kind] * math.exp((r - d) / p.reach[source.kind])
    return (mag * dx / d, mag * dy / d)


def social_force(position: Point2, velocity: Point2, goal: Optional[Point2],
                 desired_speed: float, sources: Sequence[ForceSource],
                 p: SocialForceParams, radius: float = PEDESTRIAN_RADIUS,
                 desired_velocity: Optional[Point2] = None) -> tuple[float, float]:
    """Total acceleration on a walker (m/s^2).

    The driving term relaxes the velocity toward desired_speed along the goal
    direction; a caller may instead hand in an explicit desired_velocity
    (live-controlled agents). With neither, the term damps velocity to zero.
    """
    if desired_velocity is not None:
        ex, ey = desired_velocity
    elif goal is not None:
        gx, gy = goal[0] - position[0], goal[1] - position[1]
        dist = math.hypot(gx, gy)
        if dist < 1e-9:
            ex, ey = 0.0, 0.0
        else:
            ex, ey = desired_speed * gx / dist, desired_speed * gy / dist
    else:
        ex, ey = 0.0, 0.0
    fx = (ex - velocity[0]) / p.tau
    fy = (ey - velocity[1]) / p.tau
    for source in sources:
        rx, ry = _repulsion(position, radius, source, p)
        fx += rx
        fy += ry
    return (fx, fy)


def obstacle_sources(position: Point2, polygons: Sequence[Sequence[Point2]]) -> list[ForceSource]:
    """One source per polygon: the nearest boundary point to the walker."""
    out = []
    for poly in polygons:
        best = None
        best_d = math.inf
        n = len(poly)
        for i in range(n):
            ax, ay = poly[i]
            bx, by = poly[(i + 1) % n]
            ux, uy = bx - ax, by - ay
            denom = ux * ux + uy * uy
            t = 0.0 if denom == 0.0 else ((position[0] - ax) * ux + (position[1] - ay) * uy) / denom
            t = min(max(t, 0.0), 1.0)
            qx, qy = ax + t * ux, ay + t * uy
            d = math.hypot(position[0] - qx, position[1] - qy)
            if d < best_d:
                best_d = d
                best = (qx, qy)
        if best is not None:
            out.append(ForceSource(kind="obstacle", position=best))
    return out
