"""Fixed-timestep deterministic multi-modal micro-simulation.

State is kept as structure-of-arrays (sorted by agent id) so a step is a
handful of vectorized passes: car-following accelerations for vehicles,
social forces for walkers, then a semi-implicit Euler integration. A step
never mutates its input world; unchanged arrays are shared between states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import unary_union
from shapely import contains_xy

from .idm import IdmParams
from .scene import Scene, signal_state, VEHICLE_GREEN
from .social_force import (
    CYCLIST_FORCE_PARAMS,
    CYCLIST_DESIRED_SPEED,
    CYCLIST_RADIUS,
    PEDESTRIAN_DESIRED_SPEED,
    PEDESTRIAN_RADIUS,
    SocialForceParams,
    SOURCE_KINDS,
    VEHICLE_LENGTH,
    VEHICLE_WIDTH,
)
from ._jit import HAVE_NUMBA
from .spatial import UniformGrid, pair_repulsion_forces

DT_DEFAULT = 1.0 / 90.0

VEHICLE_HUMAN = 0
VEHICLE_AUTONOMOUS = 1
PEDESTRIAN = 2
CYCLIST = 3
KIND_NAMES = ("vehicle_human", "vehicle_autonomous", "pedestrian", "cyclist")
KIND_CODES = {name: code for code, name in enumerate(KIND_NAMES)}

WALKER_RADIUS = {PEDESTRIAN: PEDESTRIAN_RADIUS, CYCLIST: CYCLIST_RADIUS}

# event kinds
EV_ACCIDENT = "accident"
EV_CROSSING_STARTED = "crossing_started"
EV_CROSSING_COMPLETED = "crossing_completed"
EV_AV_YIELD = "av_yield_started"
EV_SIGNAL_CHANGE = "signal_change"
EV_EMERGENCY_BRAKE = "emergency_brake"

WALKER_PAIR_RADIUS = 4.0   # m, walker-walker interaction cutoff
VEHICLE_PAIR_RADIUS = 8.0  # m, walker-vehicle interaction cutoff
OFFROAD_SHIELD = 0.2       # vehicle repulsion factor for walkers behind the curb
MIN_WALK_SPEED_FOR_HEADING = 0.1


@dataclass(frozen=True)
class EngineParams:
    """Engine-level tunables that are not per-agent model parameters."""

    s_safe: float = 2.0              # m, yield stop target upstream of a conflict zone
    t_anticipate: float = 2.0        # s, look-ahead for walkers about to enter a zone
    stop_line_setback: float = 2.0   # m, stop line upstream of the zone entry
    perception_near: float = 35.0    # m, leaders beyond this are ignored at cruise
    perception_slow: float = 100.0   # m, slow leaders (queues) are seen from here
    slow_leader_fraction: float = 0.6  # leader counts as slow below this * own v0
    containment_cell: float = 0.5    # m, resolution of the walkable-region mask


@dataclass(frozen=True)
class SimEvent:
    t: float
    kind: str
    subjects: tuple[int, ...] = ()
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AgentState:
    """Per-agent view materialized from the array state."""

    id: int
    kind: str
    position: tuple[float, float]
    velocity: tuple[float, float]
    heading: float
    link: Optional[str]
    s: float
    speed: float
    v0: float
    params_ref: int


@dataclass(frozen=True)
class AgentSpec:
    """Description of an agent to insert into a world."""

    id: int
    kind: str
    link: Optional[str] = None
    s: float = 0.0
    speed: float = 0.0
    position: Optional[tuple[float, float]] = None
    velocity: tuple[float, float] = (0.0, 0.0)
    goal: Optional[tuple[float, float]] = None
    v0: Optional[float] = None
    controlled: bool = False
    params_ref: Optional[int] = None  # default: table 0, cyclists table 1


def _points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Crossing-number containment test, vectorized over points."""
    x = points[:, 0]
    y = points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 <= y) != (y2 <= y)
        if not crosses.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (y - y1) / (y2 - y1)
        hit = crosses & (x < x1 + t * (x2 - x1))
        inside ^= hit
    return inside


class _ConvexRegion:
    """Half-plane containment test for a convex polygon (CCW exterior ring)."""

    def __init__(self, ring: np.ndarray):
        ring = np.asarray(ring, dtype=np.float64)
        b0 = np.roll(ring, -1, axis=0)
        if float(np.sum(ring[:, 0] * b0[:, 1] - b0[:, 0] * ring[:, 1])) < 0.0:
            ring = ring[::-1].copy()  # normalize to counterclockwise
        self.ring = ring
        a = self.ring
        b = np.roll(a, -1, axis=0)
        edge = b - a
        # inward normals for a counterclockwise ring
        self.normal = np.stack([-edge[:, 1], edge[:, 0]], axis=1)
        self.offset = np.einsum("ij,ij->i", self.normal, a)
        x0, y0 = a.min(axis=0)
        x1, y1 = a.max(axis=0)
        self.bbox = (float(x0), float(y0), float(x1), float(y1))

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.all(points @ self.normal.T >= self.offset - 1e-12, axis=1)

    def any_inside(self, points: np.ndarray) -> bool:
        return bool(self.contains(points).any()) if len(points) else False


class _Bitmap:
    """Coarse boolean raster of a shapely region for O(1) point tests."""

    def __init__(self, region, cell: float, pad: float = 1.0):
        self.cell = cell
        if region is None or region.is_empty:
            self.ok = None
            return
        minx, miny, maxx, maxy = region.bounds
        self.x0 = minx - pad
        self.y0 = miny - pad
        nx = int(math.ceil((maxx - minx + 2 * pad) / cell)) + 1
        ny = int(math.ceil((maxy - miny + 2 * pad) / cell)) + 1
        xs = self.x0 + (np.arange(nx) + 0.5) * cell
        ys = self.y0 + (np.arange(ny) + 0.5) * cell
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        self.ok = contains_xy(region, gx.ravel(), gy.ravel()).reshape(nx, ny)
        self.nx, self.ny = nx, ny

    def test(self, points: np.ndarray) -> np.ndarray:
        if self.ok is None:
            return np.zeros(len(points), dtype=bool)
        ix = np.floor((points[:, 0] - self.x0) / self.cell).astype(np.int64)
        iy = np.floor((points[:, 1] - self.y0) / self.cell).astype(np.int64)
        valid = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        out = np.zeros(len(points), dtype=bool)
        idx = np.nonzero(valid)[0]
        if len(idx):
            out[idx] = self.ok[ix[idx], iy[idx]]
        return out


@dataclass
class _CrossingPiece:
    crosswalk: int          # index into zone tables
    crosswalk_id: str
    link: int               # link index
    s_entry: float
    s_exit: float
    s_stop: float           # stop line position (entry - setback)
    signalized: bool
    poly: np.ndarray        # piece polygon vertices
    bbox: tuple[float, float, float, float]
    region: "_ConvexRegion" = None


class SceneIndex:
    """Precomputed geometry tables for a scene."""

    def __init__(self, scene: Scene, params: EngineParams, loop_links: Iterable[str] = ()):
        self.scene = scene
        self.params = params
        self.link_ids = [l.id for l in scene.links]
        self.link_index = {lid: i for i, lid in enumerate(self.link_ids)}
        n = len(scene.links)
        self.length = np.zeros(n)
        self.speed_limit = np.zeros(n)
        self.loop = np.zeros(n, dtype=bool)
        self.origin = np.zeros((n, 2))
        self.direction = np.zeros((n, 2))
        self.all_straight = all(len(l.centerline) == 2 for l in scene.links)
        seg_origin = []
        seg_dir = []
        breaks = []
        self.link_base = np.zeros(n)
        base = 0.0
        for i, link in enumerate(scene.links):
            self.length[i] = link.length
            self.speed_limit[i] = link.speed_limit
            self.loop[i] = link.id in loop_links
            pts = np.asarray(link.centerline)
            d = pts[1] - pts[0]
            self.origin[i] = pts[0]
            self.direction[i] = d / np.linalg.norm(d)
            self.link_base[i] = base
            run = 0.0
            for a, b in zip(pts[:-1], pts[1:]):
                seg = np.asarray(b) - np.asarray(a)
                seg_len = float(np.linalg.norm(seg))
                seg_origin.append(a)
                seg_dir.append(seg / seg_len)
                breaks.append(base + run)
                run += seg_len
            base += run + 1.0  # gap between links in the global coordinate
        self.seg_origin = np.asarray(seg_origin) if seg_origin else np.zeros((0, 2))
        self.seg_dir = np.asarray(seg_dir) if seg_dir else np.zeros((0, 2))
        self.breaks = np.asarray(breaks) if breaks else np.zeros(0)

        # conflict zones, per crosswalk and per (crosswalk, link) piece
        self.crosswalk_ids = [c.id for c in scene.crosswalks]
        self.zone_poly: list[np.ndarray] = []
        self.zone_bbox: list[tuple[float, float, float, float]] = []
        self.zone_region: list[_ConvexRegion] = []
        self.entry_anchor = np.zeros((len(scene.crosswalks), 2))
        self.exit_anchor = np.zeros((len(scene.crosswalks), 2))
        self.pieces: list[_CrossingPiece] = []
        signalized = scene.signal is not None
        for ci, cw in enumerate(scene.crosswalks):
            cw_poly = Polygon(cw.polygon)
            self.entry_anchor[ci] = cw.entry_anchor
            self.exit_anchor[ci] = cw.exit_anchor
            union = cw_poly.intersection(
                unary_union([scene.link(lid).footprint() for lid in cw.crossed_links])
            )
            ring = np.asarray(union.convex_hull.exterior.coords)[:-1]
            self.zone_poly.append(ring)
            self.zone_bbox.append(union.bounds)
            self.zone_region.append(_ConvexRegion(ring))
            for lid in cw.crossed_links:
                li = self.link_index[lid]
                link = scene.link(lid)
                piece = cw_poly.intersection(link.footprint())
                if piece.is_empty:
                    continue
                line = LineString(link.centerline)
                seg = line.intersection(piece)
                if seg.is_empty:
                    continue
                pts = list(seg.coords) if seg.geom_type == "LineString" else [p for g in getattr(seg, "geoms", []) for p in g.coords]
                if not pts:
                    continue
                ss = [line.project(Point(p)) for p in pts]
                s_entry, s_exit = min(ss), max(ss)
                pring = np.asarray(piece.convex_hull.exterior.coords)[:-1]
                self.pieces.append(
                    _CrossingPiece(
                        crosswalk=ci,
                        crosswalk_id=cw.id,
                        link=li,
                        s_entry=s_entry,
                        s_exit=s_exit,
                        s_stop=s_entry - params.stop_line_setback,
                        signalized=signalized,
                        poly=pring,
                        bbox=piece.bounds,
                        region=_ConvexRegion(pring),
                    )
                )

        # walkable region: walk area plus crossings plus the roadway itself
        walk_shapes = []
        if scene.walk_area:
            walk_shapes.append(Polygon(scene.walk_area))
        walk_shapes += [Polygon(c.polygon) for c in scene.crosswalks]
        if walk_shapes:
            wa = unary_union(walk_shapes)
            minx, miny, maxx, maxy = wa.bounds
            road = unary_union([l.footprint() for l in scene.links]) if scene.links else None
            permitted = wa if road is None else unary_union([wa, road.intersection(wa.buffer(25.0))])
            self.permitted = _Bitmap(permitted, params.containment_cell)
            if road is not None:
                self.road_mask = _Bitmap(road.intersection(wa.buffer(25.0)), params.containment_cell)
            else:
                self.road_mask = _Bitmap(None, params.containment_cell)
        else:
            self.permitted = _Bitmap(None, params.containment_cell)
            self.road_mask = _Bitmap(None, params.containment_cell)
        self.obstacle_polys = [np.asarray(o) for o in scene.obstacles]

    def positions_for(self, link_idx: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World position and heading for vehicles at longitudinal offsets."""
        if self.all_straight:
            pos = self.origin[link_idx] + self.direction[link_idx] * s[:, None]
            heading = np.arctan2(self.direction[link_idx, 1], self.direction[link_idx, 0])
            return pos, heading
        g = self.link_base[link_idx] + s
        seg = np.clip(np.searchsorted(self.breaks, g, side="right") - 1, 0, len(self.breaks) - 1)
        rel = g - self.breaks[seg]
        pos = self.seg_origin[seg] + self.seg_dir[seg] * rel[:, None]
        heading = np.arctan2(self.seg_dir[seg, 1], self.seg_dir[seg, 0])
        return pos, heading


@dataclass(frozen=True)
class WorldState:
    """Immutable simulation state at one tick.

    Time is derived from the integer tick (t = tick / hz), so tick 10800 at
    90 Hz is exactly 120 s.
    """

    t: float
    tick: int
    dt: float
    hz: float
    index: SceneIndex
    idm_params: tuple[IdmParams, ...]
    sf_params: tuple[SocialForceParams, ...]
    engine: EngineParams
    ids: np.ndarray          # int64, strictly increasing
    kind: np.ndarray         # int8 codes
    pos: np.ndarray          # (n, 2)
    vel: np.ndarray          # (n, 2)
    heading: np.ndarray
    link: np.ndarray         # int32, -1 for walkers
    s: np.ndarray            # front-bumper offset along the link
    speed: np.ndarray        # scalar speed (vehicles)
    v0: np.ndarray           # desired speed
    goal: np.ndarray         # (n, 2), nan when absent
    desired_vel: np.ndarray  # (n, 2), live command for controlled agents
    controlled: np.ndarray   # bool
    param_idx: np.ndarray    # int16 into idm_params / sf_params by kind
    accel_override: np.ndarray  # nan = none (test/benchmark hook)
    yield_mask: np.ndarray   # vehicles currently holding a yield target
    em_mask: np.ndarray      # vehicles currently braking harder than comfort
    zone_mask: np.ndarray    # (n, n_crosswalks) walker-inside-zone flags
    accident_keys: frozenset = frozenset()
    rng_state: object = None
    param_cols: object = None     # per-table parameter columns, set at build
    kind_sel: object = None       # cached (vehicle indices, walker indices)

    @property
    def n(self) -> int:
        return len(self.ids)

    def _selections(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind_sel is None:
            object.__setattr__(
                self,
                "kind_sel",
                (
                    np.nonzero(self.kind <= VEHICLE_AUTONOMOUS)[0],
                    np.nonzero(self.kind >= PEDESTRIAN)[0],
                ),
            )
        return self.kind_sel[:2]

    def _vehicle_param_rows(self, vsel: np.ndarray) -> dict:
        """Per-vehicle IDM parameter columns; cached alongside kind_sel."""
        cached = self.kind_sel
        if cached is not None and len(cached) == 3:
            return cached[2]
        idm_cols = self.param_cols[0] if self.param_cols else {
            name: np.array([getattr(p, name) for p in self.idm_params])
            for name in ("v0", "T", "a", "b", "s0", "delta", "b_emergency")
        }
        if "two_sqrt_ab" not in idm_cols:
            idm_cols["two_sqrt_ab"] = 2.0 * np.sqrt(idm_cols["a"] * idm_cols["b"])
        pidx = self.param_idx[vsel]
        rows = {name: col[pidx] for name, col in idm_cols.items()}
        if cached is not None:
            object.__setattr__(self, "kind_sel", (cached[0], cached[1], rows))
        return rows

    @property
    def scene(self) -> Scene:
        return self.index.scene

    def agents(self) -> list[AgentState]:
        out = []
        for i in range(self.n):
            li = int(self.link[i])
            out.append(
                AgentState(
                    id=int(self.ids[i]),
                    kind=KIND_NAMES[self.kind[i]],
                    position=(float(self.pos[i, 0]), float(self.pos[i, 1])),
                    velocity=(float(self.vel[i, 0]), float(self.vel[i, 1])),
                    heading=float(self.heading[i]),
                    link=self.index.link_ids[li] if li >= 0 else None,
                    s=float(self.s[i]),
                    speed=float(self.speed[i]),
                    v0=float(self.v0[i]),
                    params_ref=int(self.param_idx[i]),
                )
            )
        return out

    def agent(self, agent_id: int) -> AgentState:
        return self._agent_at(self.index_of(agent_id))

    def _agent_at(self, i: int) -> AgentState:
        li = int(self.link[i])
        return AgentState(
            id=int(self.ids[i]),
            kind=KIND_NAMES[self.kind[i]],
            position=(float(self.pos[i, 0]), float(self.pos[i, 1])),
            velocity=(float(self.vel[i, 0]), float(self.vel[i, 1])),
            heading=float(self.heading[i]),
            link=self.index.link_ids[li] if li >= 0 else None,
            s=float(self.s[i]),
            speed=float(self.speed[i]),
            v0=float(self.v0[i]),
            params_ref=int(self.param_idx[i]),
        )

    def index_of(self, agent_id: int) -> int:
        i = int(np.searchsorted(self.ids, agent_id))
        if i >= self.n or self.ids[i] != agent_id:
            raise KeyError(f"unknown agent id {agent_id}")
        return i


def build_world(
    scene: Scene,
    hz: float = 90.0,
    seed: int = 0,
    idm_params: Sequence[IdmParams] = (IdmParams(),),
    sf_params: Sequence[SocialForceParams] = (SocialForceParams(), CYCLIST_FORCE_PARAMS),
    engine: EngineParams = EngineParams(),
    loop_links: Iterable[str] = (),
) -> WorldState:
    """Empty world over a scene; agents are added with add_agents()."""
    if hz <= 0.0:
        raise ValueError("hz must be > 0")
    index = SceneIndex(scene, engine, loop_links)
    ncw = len(scene.crosswalks)
    idm_cols = {
        name: np.array([getattr(p, name) for p in idm_params])
        for name in ("v0", "T", "a", "b", "s0", "delta", "b_emergency")
    }
    idm_cols["two_sqrt_ab"] = 2.0 * np.sqrt(idm_cols["a"] * idm_cols["b"])
    sf_cols = {
        "tau": np.array([p.tau for p in sf_params]),
        "v_max": np.array([p.v_max for p in sf_params]),
        "strength": np.array([[p.strength[k] for k in SOURCE_KINDS] for p in sf_params]),
        "reach": np.array([[p.reach[k] for k in SOURCE_KINDS] for p in sf_params]),
    }
    return WorldState(
        param_cols=(idm_cols, sf_cols),
        t=0.0,
        tick=0,
        dt=1.0 / hz,
        hz=hz,
        index=index,
        idm_params=tuple(idm_params),
        sf_params=tuple(sf_params),
        engine=engine,
        ids=np.empty(0, dtype=np.int64),
        kind=np.empty(0, dtype=np.int8),
        pos=np.empty((0, 2)),
        vel=np.empty((0, 2)),
        heading=np.empty(0),
        link=np.empty(0, dtype=np.int32),
        s=np.empty(0),
        speed=np.empty(0),
        v0=np.empty(0),
        goal=np.full((0, 2), np.nan),
        desired_vel=np.zeros((0, 2)),
        controlled=np.empty(0, dtype=bool),
        param_idx=np.empty(0, dtype=np.int16),
        accel_override=np.empty(0),
        yield_mask=np.empty(0, dtype=bool),
        em_mask=np.empty(0, dtype=bool),
        zone_mask=np.empty((0, ncw), dtype=bool),
        accident_keys=frozenset(),
        rng_state=np.random.PCG64(seed).state,
    )


def add_agents(world: WorldState, specs: Sequence[AgentSpec]) -> WorldState:
    if not specs:
        return world
    index = world.index
    n_new = len(specs)
    ids = np.array([sp.id for sp in specs], dtype=np.int64)
    if len(np.intersect1d(ids, world.ids)) or len(np.unique(ids)) != n_new:
        raise ValueError("agent ids must be unique")
    kind = np.array([KIND_CODES[sp.kind] for sp in specs], dtype=np.int8)
    link = np.full(n_new, -1, dtype=np.int32)
    s = np.zeros(n_new)
    speed = np.zeros(n_new)
    pos = np.zeros((n_new, 2))
    vel = np.asarray([sp.velocity for sp in specs], dtype=np.float64)
    v0 = np.zeros(n_new)
    goal = np.full((n_new, 2), np.nan)
    controlled = np.array([sp.controlled for sp in specs], dtype=bool)
    n_sf = len(world.sf_params)
    param_idx = np.array(
        [
            sp.params_ref
            if sp.params_ref is not None
            else (1 if KIND_CODES[sp.kind] == CYCLIST and n_sf > 1 else 0)
            for sp in specs
        ],
        dtype=np.int16,
    )
    heading = np.zeros(n_new)
    for i, sp in enumerate(specs):
        if kind[i] <= VEHICLE_AUTONOMOUS:
            if sp.link is None:
                raise ValueError(f"vehicle {sp.id} needs a link")
            li = index.link_index[sp.link]
            link[i] = li
            s[i] = sp.s
            speed[i] = sp.speed
            v0[i] = sp.v0 if sp.v0 is not None else index.speed_limit[li]
        else:
            if sp.position is None:
                raise ValueError(f"walker {sp.id} needs a position")
            pos[i] = sp.position
            default_speed = PEDESTRIAN_DESIRED_SPEED if kind[i] == PEDESTRIAN else CYCLIST_DESIRED_SPEED
            v0[i] = sp.v0 if sp.v0 is not None else default_speed
            if sp.goal is not None:
                goal[i] = sp.goal
            speed[i] = math.hypot(*sp.velocity)
    vmask = kind <= VEHICLE_AUTONOMOUS
    if vmask.any():
        # s tracks the front bumper; the drawn position is the body centre
        vpos, vheading = index.positions_for(link[vmask], s[vmask] - VEHICLE_LENGTH / 2.0)
        pos[vmask] = vpos
        heading[vmask] = vheading
        vel[vmask] = np.stack([np.cos(vheading), np.sin(vheading)], axis=1) * speed[vmask, None]

    ids_all = np.concatenate([world.ids, ids])
    order = np.argsort(ids_all, kind="stable")

    def cat(a, b):
        return np.concatenate([a, b])[order]

    ncw = world.zone_mask.shape[1]
    return replace(
        world,
        kind_sel=None,
        ids=ids_all[order],
        kind=cat(world.kind, kind),
        pos=cat(world.pos, pos),
        vel=cat(world.vel, vel),
        heading=cat(world.heading, heading),
        link=cat(world.link, link),
        s=cat(world.s, s),
        speed=cat(world.speed, speed),
        v0=cat(world.v0, v0),
        goal=cat(world.goal, goal),
        desired_vel=cat(world.desired_vel, np.zeros((n_new, 2))),
        controlled=cat(world.controlled, controlled),
        param_idx=cat(world.param_idx, param_idx),
        accel_override=cat(world.accel_override, np.full(n_new, np.nan)),
        yield_mask=cat(world.yield_mask, np.zeros(n_new, dtype=bool)),
        em_mask=cat(world.em_mask, np.zeros(n_new, dtype=bool)),
        zone_mask=cat(world.zone_mask, np.zeros((n_new, ncw), dtype=bool)),
    )


def remove_agents(world: WorldState, agent_ids: Iterable[int]) -> WorldState:
    drop = np.isin(world.ids, np.asarray(list(agent_ids), dtype=np.int64))
    return _filter_world(world, ~drop)


def _filter_world(world: WorldState, keep: np.ndarray) -> WorldState:
    if keep.all():
        return world
    return replace(
        world,
        kind_sel=None,
        ids=world.ids[keep],
        kind=world.kind[keep],
        pos=world.pos[keep],
        vel=world.vel[keep],
        heading=world.heading[keep],
        link=world.link[keep],
        s=world.s[keep],
        speed=world.speed[keep],
        v0=world.v0[keep],
        goal=world.goal[keep],
        desired_vel=world.desired_vel[keep],
        controlled=world.controlled[keep],
        param_idx=world.param_idx[keep],
        accel_override=world.accel_override[keep],
        yield_mask=world.yield_mask[keep],
        em_mask=world.em_mask[keep],
        zone_mask=world.zone_mask[keep],
    )


def set_goals(world: WorldState, updates: dict) -> WorldState:
    goal = world.goal.copy()
    for agent_id, g in updates.items():
        goal[world.index_of(agent_id)] = g
    return replace(world, goal=goal)


def set_accel_override(world: WorldState, updates: dict) -> WorldState:
    override = world.accel_override.copy()
    for agent_id, a in updates.items():
        override[world.index_of(agent_id)] = a if a is not None else np.nan
    return replace(world, accel_override=override)


def neighbor_query(world: WorldState, position, radius: float) -> list[AgentState]:
    """Agents within `radius` of `position` (closed ball), ordered by id."""
    if radius <= 0.0:
        raise ValueError("radius must be > 0")
    if world.n == 0:
        return []
    grid = UniformGrid(world.pos, max(radius, 1e-6))
    idx = grid.query(position, radius)
    return [world._agent_at(int(i)) for i in np.sort(idx)]


def _zone_state(world: WorldState, ci: int) -> tuple[bool, bool]:
    """(occupied, entering soon) for one crossing, from current walker states."""
    eng = world.engine
    index = world.index
    wsel = world._selections()[1]
    if not len(wsel):
        return False, False
    wpos = world.pos[wsel]
    x0, y0, x1, y1 = index.zone_bbox[ci]
    pad = 2.0 * eng.t_anticipate
    near = (
        (wpos[:, 0] >= x0 - pad) & (wpos[:, 0] <= x1 + pad)
        & (wpos[:, 1] >= y0 - pad) & (wpos[:, 1] <= y1 + pad)
    )
    if not near.any():
        return False, False
    p_near = wpos[near]
    region = index.zone_region[ci]
    if region.any_inside(p_near):
        return True, False
    v_near = world.vel[wsel][near]
    for frac in (0.25, 0.5, 0.75, 1.0):
        if region.any_inside(p_near + v_near * (frac * eng.t_anticipate)):
            return False, True
    return False, False


def av_yield_target(world: WorldState, vehicle_id: int) -> Optional[float]:
    """Virtual stop point (longitudinal m) for an autonomous vehicle.

    Whenever any pedestrian is inside the conflict zone ahead, or will enter
    it within the anticipation window at current velocity, the vehicle gets a
    stationary target s_safe upstream of the zone entry; otherwise None.
    """
    i = world.index_of(vehicle_id)
    if world.kind[i] != VEHICLE_AUTONOMOUS:
        raise ValueError(f"agent {vehicle_id} is not an autonomous vehicle")
    eng = world.engine
    best = None
    for piece in world.index.pieces:
        if piece.link != world.link[i] or world.s[i] >= piece.s_entry:
            continue
        occupied, incoming = _zone_state(world, piece.crosswalk)
        if occupied or incoming:
            target = piece.s_entry - eng.s_safe
            if best is None or target < best:
                best = target
    return best


def human_driver_target(world: WorldState, vehicle_id: int) -> Optional[float]:
    """Virtual stop point for a human driver, or None to continue.

    Stops at the stop line whenever the signal is not vehicle green. Brakes
    for a pedestrian inside this lane's slice of the crossing only when the
    required deceleration is still within the physical braking limit;
    otherwise the vehicle continues and the accident logic takes over.
    """
    i = world.index_of(vehicle_id)
    if world.kind[i] != VEHICLE_HUMAN:
        raise ValueError(f"agent {vehicle_id} is not a human-driven vehicle")
    eng = world.engine
    plan = world.scene.signal
    not_green = plan is not None and signal_state(plan, world.t) != VEHICLE_GREEN
    b_emergency = world.idm_params[world.param_idx[i]].b_emergency
    wsel = world._selections()[1]
    best = None
    for piece in world.index.pieces:
        if piece.link != world.link[i]:
            continue
        if piece.signalized and not_green and world.s[i] < piece.s_stop:
            if best is None or piece.s_stop < best:
                best = piece.s_stop
        if world.s[i] < piece.s_entry and len(wsel):
            if piece.region.any_inside(world.pos[wsel]):
                d_entry = max(piece.s_entry - world.s[i], 1e-6)
                required = world.speed[i] ** 2 / (2.0 * d_entry)
                if required <= b_emergency:
                    target = piece.s_entry - eng.s_safe
                    if best is None or target < best:
                        best = target
    return best


def _idm_interaction_term(v, gap, dv, p_T, p_s0, p_ab):
    s_star = p_s0 + v * p_T + v * dv / p_ab
    return (s_star / np.maximum(gap, 1e-9)) ** 2


def _vehicle_accels(world: WorldState, vsel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Accelerations for vehicles plus the updated yield flags."""
    index = world.index
    eng = world.engine
    nv = len(vsel)
    link_v = world.link[vsel]
    s_v = world.s[vsel]
    v = world.speed[vsel]

    # per-agent IDM parameter columns
    rows = world._vehicle_param_rows(vsel)
    p_v0 = rows["v0"]
    p_T = rows["T"]
    p_a = rows["a"]
    p_b = rows["b"]
    p_s0 = rows["s0"]
    p_delta = rows["delta"]
    p_bem = rows["b_emergency"]
    p_ab = rows["two_sqrt_ab"]
    des = np.where(world.v0[vsel] > 0, world.v0[vsel], p_v0)

    free = 1.0 - (v / des) ** p_delta
    inter = np.zeros(nv)
    needed = np.zeros(nv)  # kinematically required deceleration

    # real leader: next vehicle ahead on the same link
    order = np.lexsort((s_v, link_v))
    same = np.zeros(nv, dtype=bool)
    if nv > 1:
        same[:-1] = link_v[order][:-1] == link_v[order][1:]
    gap = np.full(nv, np.inf)
    lead_speed = np.zeros(nv)
    fol = order[:-1][same[:-1]] if nv > 1 else np.empty(0, dtype=np.int64)
    led = order[1:][same[:-1]] if nv > 1 else np.empty(0, dtype=np.int64)
    if len(fol):
        gap[fol] = s_v[led] - VEHICLE_LENGTH - s_v[fol]
        lead_speed[fol] = v[led]
    # ring links wrap: the front-most vehicle follows the rearmost
    loop_sel = index.loop[link_v]
    if loop_sel.any() and nv > 1:
        is_last = np.ones(nv, dtype=bool)
        is_last[order[:-1]] = ~same[:-1]
        heads = np.nonzero(is_last & loop_sel)[0]
        for h in heads:
            li = link_v[h]
            first = order[np.searchsorted(link_v[order], li, side="left")]
            if first != h:
                gap[h] = (index.length[li] - s_v[h]) + s_v[first] - VEHICLE_LENGTH
                lead_speed[h] = v[first]

    engaged = (gap <= eng.perception_near) | (
        (gap <= eng.perception_slow) & (lead_speed < eng.slow_leader_fraction * des)
    )
    if engaged.any():
        e = engaged
        dv = v[e] - lead_speed[e]
        inter[e] = _idm_interaction_term(v[e], gap[e], dv, p_T[e], p_s0[e], p_ab[e])
        closing = np.maximum(v[e] ** 2 - lead_speed[e] ** 2, 0.0)
        needed[e] = np.maximum(needed[e], closing / (2.0 * np.maximum(gap[e], 1e-6)))

    # virtual stationary targets: signal stop lines and conflict-zone yields
    new_yield = np.zeros(nv, dtype=bool)
    if index.pieces:
        wsel = world._selections()[1]
        ncw = len(index.crosswalk_ids)
        sig_state = (
            signal_state(world.scene.signal, world.t) if world.scene.signal is not None else VEHICLE_GREEN
        )
        # zone occupancy comes from the membership flags of the state at t
        occupied_union = (
            world.zone_mask.any(axis=0) if world.zone_mask.size else np.zeros(ncw, dtype=bool)
        )
        incoming_union = np.zeros(ncw, dtype=bool)
        in_zone_rows = world.zone_mask[wsel] if world.zone_mask.size else None
        if len(wsel):
            wpos = world.pos[wsel]
            wvel = world.vel[wsel]
            for ci in range(ncw):
                if occupied_union[ci]:
                    continue
                x0, y0, x1, y1 = index.zone_bbox[ci]
                pad = 2.0 * eng.t_anticipate  # walkers are capped near 2 m/s
                near = (
                    (wpos[:, 0] >= x0 - pad) & (wpos[:, 0] <= x1 + pad)
                    & (wpos[:, 1] >= y0 - pad) & (wpos[:, 1] <= y1 + pad)
                )
                if not near.any():
                    continue
                p_near = wpos[near]
                v_near = wvel[near]
                region = index.zone_region[ci]
                for frac in (0.25, 0.5, 0.75, 1.0):
                    if region.any_inside(p_near + v_near * (frac * eng.t_anticipate)):
                        incoming_union[ci] = True
                        break
        for piece in index.pieces:
            on_link = link_v == piece.link
            if not on_link.any():
                continue
            upstream = on_link & (s_v < piece.s_entry)
            # signal: everyone stops at the line unless the phase is vehicle green
            if piece.signalized and sig_state != VEHICLE_GREEN:
                sel = on_link & (s_v < piece.s_stop)
                if sel.any():
                    g = piece.s_stop - s_v[sel]
                    inter[sel] = np.maximum(
                        inter[sel],
                        _idm_interaction_term(v[sel], g, v[sel], p_T[sel], p_s0[sel], p_ab[sel]),
                    )
                    needed[sel] = np.maximum(needed[sel], v[sel] ** 2 / (2.0 * np.maximum(g, 1e-6)))
            # pedestrians inside this lane's slice of the crossing
            piece_occupied = False
            if occupied_union[piece.crosswalk] and len(wsel):
                members = wsel[in_zone_rows[:, piece.crosswalk]]
                if len(members):
                    piece_occupied = piece.region.any_inside(world.pos[members])
            av_sel = upstream & (world.kind[vsel] == VEHICLE_AUTONOMOUS)
            if (occupied_union[piece.crosswalk] or incoming_union[piece.crosswalk]) and av_sel.any():
                g = np.maximum(piece.s_entry - eng.s_safe - s_v[av_sel], 0.1)
                inter[av_sel] = np.maximum(
                    inter[av_sel],
                    _idm_interaction_term(v[av_sel], g, v[av_sel], p_T[av_sel], p_s0[av_sel], p_ab[av_sel]),
                )
                needed[av_sel] = np.maximum(needed[av_sel], v[av_sel] ** 2 / (2.0 * np.maximum(g, 1e-6)))
                # the yield flag marks vehicles actually reacting, not the
                # whole upstream column
                new_yield[av_sel] |= g <= eng.perception_slow
            if piece_occupied:
                # human drivers brake only when braking can still succeed
                hu_sel = upstream & (world.kind[vsel] == VEHICLE_HUMAN)
                if hu_sel.any():
                    d_entry = np.maximum(piece.s_entry - s_v[hu_sel], 1e-6)
                    required = v[hu_sel] ** 2 / (2.0 * d_entry)
                    can = required <= p_bem[hu_sel]
                    if can.any():
                        target = np.nonzero(hu_sel)[0][can]
                        g = np.maximum(piece.s_entry - eng.s_safe - s_v[target], 0.1)
                        inter[target] = np.maximum(
                            inter[target],
                            _idm_interaction_term(v[target], g, v[target], p_T[target], p_s0[target], p_ab[target]),
                        )
                        needed[target] = np.maximum(needed[target], v[target] ** 2 / (2.0 * np.maximum(g, 1e-6)))

    acc = p_a * (free - inter)
    # autonomous vehicles brake politely: comfortable deceleration unless the
    # stop is kinematically impossible at that rate
    is_av = world.kind[vsel] == VEHICLE_AUTONOMOUS
    comfort = is_av & (needed <= p_b)
    low = np.where(comfort, -p_b, -p_bem)
    acc = np.clip(acc, low, p_a)
    override = world.accel_override[vsel]
    has_override = np.isfinite(override)
    if has_override.any():
        acc = np.where(has_override, np.clip(override, -p_bem, p_a), acc)
    return acc, new_yield


_KIND_COL = {"pedestrian": 0, "obstacle": 1, "vehicle": 2, "cyclist": 3}


def _bboxes_touch(a: np.ndarray, b: np.ndarray, pad: float) -> bool:
    if not len(a) or not len(b):
        return False
    a0 = a.min(axis=0)
    a1 = a.max(axis=0)
    b0 = b.min(axis=0)
    b1 = b.max(axis=0)
    return bool(
        (a0[0] <= b1[0] + pad) and (b0[0] <= a1[0] + pad)
        and (a0[1] <= b1[1] + pad) and (b0[1] <= a1[1] + pad)
    )


class _WalkerContext:
    """Shared read-only inputs for walker force evaluation."""

    def __init__(self, world: WorldState, wsel: np.ndarray, vsel: np.ndarray):
        self.world = world
        self.wsel = wsel
        self.vsel = vsel
        self.pos_w = world.pos[wsel]
        self.vel_w = world.vel[wsel]
        self.kind_w = world.kind[wsel]
        self.pidx = world.param_idx[wsel]
        if world.param_cols:
            sf_cols = world.param_cols[1]
            self.p_tau = sf_cols["tau"][self.pidx]
            self.strength = sf_cols["strength"]
            self.reach = sf_cols["reach"]
        else:
            tbl = world.sf_params
            self.p_tau = np.array([p.tau for p in tbl])[self.pidx]
            self.strength = np.array([[p.strength[k] for k in SOURCE_KINDS] for p in tbl])
            self.reach = np.array([[p.reach[k] for k in SOURCE_KINDS] for p in tbl])
        self.radius_w = np.where(self.kind_w == PEDESTRIAN, PEDESTRIAN_RADIUS, CYCLIST_RADIUS)
        self.src_col = np.where(
            self.kind_w == PEDESTRIAN, _KIND_COL["pedestrian"], _KIND_COL["cyclist"]
        ).astype(np.int64)
        self.pidx64 = self.pidx.astype(np.int64)
        # small worlds skip the grids and test all pairs directly
        self.brute = len(wsel) * max(len(wsel), len(vsel)) <= 8192
        self.grid_w = (
            UniformGrid(self.pos_w, WALKER_PAIR_RADIUS) if len(wsel) > 1 and not self.brute else None
        )
        self.grid_v = None
        if len(vsel) and not self.brute and len(wsel):
            # only index vehicles when the two groups can actually interact
            vpos = world.pos[vsel]
            if _bboxes_touch(self.pos_w, vpos, VEHICLE_PAIR_RADIUS):
                self.grid_v = UniformGrid(vpos, VEHICLE_PAIR_RADIUS)

    def walker_pairs(self, pos: np.ndarray, lo: int) -> tuple[np.ndarray, np.ndarray]:
        if self.brute:
            if len(self.wsel) < 2:
                return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
            d = pos[:, None, :] - self.pos_w[None, :, :]
            close = (d[:, :, 0] ** 2 + d[:, :, 1] ** 2) <= WALKER_PAIR_RADIUS**2
            return np.nonzero(close)
        return self.grid_w._candidate_pairs(pos, WALKER_PAIR_RADIUS)

    def vehicle_pairs(self, pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.brute:
            if not len(self.vsel):
                return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
            d = pos[:, None, :] - self.world.pos[self.vsel][None, :, :]
            close = (d[:, :, 0] ** 2 + d[:, :, 1] ** 2) <= VEHICLE_PAIR_RADIUS**2
            return np.nonzero(close)
        if self.grid_v is None:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return self.grid_v._candidate_pairs(pos, VEHICLE_PAIR_RADIUS)


def _walker_accels_range(ctx: _WalkerContext, lo: int, hi: int) -> np.ndarray:
    """Force rows for walkers lo:hi, against all agents as sources."""
    world = ctx.world
    nw = hi - lo
    rows = slice(lo, hi)
    pos = ctx.pos_w[rows]
    pidx = ctx.pidx[rows]

    # driving term: relax toward the commanded or goal-directed velocity
    desired = np.zeros((nw, 2))
    ctrl = world.controlled[ctx.wsel[rows]]
    desired[ctrl] = world.desired_vel[ctx.wsel[rows]][ctrl]
    has_goal = ~ctrl & np.isfinite(world.goal[ctx.wsel[rows], 0])
    if has_goal.any():
        d = world.goal[ctx.wsel[rows]][has_goal] - pos[has_goal]
        dist = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
        far = dist > 1e-9
        unit = np.zeros_like(d)
        unit[far] = d[far] / dist[far, None]
        desired[has_goal] = unit * world.v0[ctx.wsel[rows]][has_goal, None]
    force = (desired - ctx.vel_w[rows]) / ctx.p_tau[rows, None]

    def accumulate(qi, dvec, dist, amp, brange, rsum):
        mag = amp * np.exp((rsum - dist) / brange) / np.maximum(dist, 1e-9)
        fx = np.bincount(qi, weights=mag * dvec[:, 0], minlength=nw)
        fy = np.bincount(qi, weights=mag * dvec[:, 1], minlength=nw)
        return np.stack([fx, fy], axis=1)

    # walker-walker repulsion
    dense = ctx.grid_w.dense_context() if ctx.grid_w is not None else None
    if dense is not None and HAVE_NUMBA:
        fx = np.zeros(nw)
        fy = np.zeros(nw)
        order, cell_lo, cell_hi, cxr, cyr, gnx, gny = dense
        pair_repulsion_forces(
            ctx.pos_w, ctx.src_col, ctx.radius_w, ctx.strength, ctx.reach, ctx.pidx64,
            order, cell_lo, cell_hi, cxr, cyr, gnx, gny, WALKER_PAIR_RADIUS,
            lo, hi, fx, fy,
        )
        force[:, 0] += fx
        force[:, 1] += fy
    elif ctx.grid_w is not None or ctx.brute:
        qi, gj = ctx.walker_pairs(pos, lo)
        keep = (lo + qi) != gj
        qi, gj = qi[keep], gj[keep]
        if len(qi):
            dvec = pos[qi] - ctx.pos_w[gj]
            dist = np.sqrt(dvec[:, 0] ** 2 + dvec[:, 1] ** 2)
            keep = dist <= WALKER_PAIR_RADIUS
            qi, gj, dvec, dist = qi[keep], gj[keep], dvec[keep], dist[keep]
        if len(qi):
            src_col = np.where(ctx.kind_w[gj] == PEDESTRIAN, _KIND_COL["pedestrian"], _KIND_COL["cyclist"])
            amp = ctx.strength[pidx[qi], src_col]
            brange = ctx.reach[pidx[qi], src_col]
            rsum = ctx.radius_w[lo + qi] + ctx.radius_w[gj]
            force += accumulate(qi, dvec, dist, amp, brange, rsum)

    # vehicle repulsion, from the nearest rectangle boundary point
    if ctx.grid_v is not None or (ctx.brute and len(ctx.vsel)):
        qi, vj = ctx.vehicle_pairs(pos)
        if len(qi):
            vpos = world.pos[ctx.vsel][vj]
            vhead = world.heading[ctx.vsel][vj]
            c, sn = np.cos(vhead), np.sin(vhead)
            dx = pos[qi, 0] - vpos[:, 0]
            dy = pos[qi, 1] - vpos[:, 1]
            lx = np.clip(c * dx + sn * dy, -VEHICLE_LENGTH / 2.0, VEHICLE_LENGTH / 2.0)
            ly = np.clip(-sn * dx + c * dy, -VEHICLE_WIDTH / 2.0, VEHICLE_WIDTH / 2.0)
            refx = vpos[:, 0] + c * lx - sn * ly
            refy = vpos[:, 1] + sn * lx + c * ly
            dvec = np.stack([pos[qi, 0] - refx, pos[qi, 1] - refy], axis=1)
            dist = np.sqrt(dvec[:, 0] ** 2 + dvec[:, 1] ** 2)
            keep = (dist <= VEHICLE_PAIR_RADIUS) & (dist > 1e-9)
            qi, dvec, dist = qi[keep], dvec[keep], dist[keep]
            if len(qi):
                amp = ctx.strength[pidx[qi], _KIND_COL["vehicle"]]
                # walkers behind the curb are shielded from traffic
                on_road = world.index.road_mask.test(pos[qi])
                amp = amp * np.where(on_road, 1.0, OFFROAD_SHIELD)
                brange = ctx.reach[pidx[qi], _KIND_COL["vehicle"]]
                force += accumulate(qi, dvec, dist, amp, brange, ctx.radius_w[lo + qi])

    # obstacle repulsion from the nearest boundary point of each polygon
    for poly in world.index.obstacle_polys:
        npoly = len(poly)
        best_d = np.full(nw, np.inf)
        best = np.zeros((nw, 2))
        for i in range(npoly):
            a = poly[i]
            b = poly[(i + 1) % npoly]
            u = b - a
            denom = float(u[0] ** 2 + u[1] ** 2)
            t = ((pos[:, 0] - a[0]) * u[0] + (pos[:, 1] - a[1]) * u[1]) / denom if denom else np.zeros(nw)
            t = np.clip(t, 0.0, 1.0)
            qx = a[0] + t * u[0]
            qy = a[1] + t * u[1]
            d = np.sqrt((pos[:, 0] - qx) ** 2 + (pos[:, 1] - qy) ** 2)
            closer = d < best_d
            best_d = np.where(closer, d, best_d)
            best[closer] = np.stack([qx, qy], axis=1)[closer]
        within = best_d <= WALKER_PAIR_RADIUS
        if within.any():
            qi = np.nonzero(within)[0]
            dvec = pos[qi] - best[qi]
            dist = np.maximum(best_d[qi], 1e-9)
            amp = ctx.strength[pidx[qi], _KIND_COL["obstacle"]]
            brange = ctx.reach[pidx[qi], _KIND_COL["obstacle"]]
            force += accumulate(qi, dvec, dist, amp, brange, ctx.radius_w[lo + qi])

    return force


def overlap_pairs(world: WorldState) -> list[tuple[int, int]]:
    """(pedestrian id, vehicle id) pairs whose bounding shapes overlap."""
    vsel, wsel = world._selections()
    if not len(wsel) or not len(vsel):
        return []
    if not _bboxes_touch(world.pos[wsel], world.pos[vsel], VEHICLE_PAIR_RADIUS):
        return []
    if len(wsel) * len(vsel) <= 8192:
        d = world.pos[wsel][:, None, :] - world.pos[vsel][None, :, :]
        close = (d[:, :, 0] ** 2 + d[:, :, 1] ** 2) <= VEHICLE_PAIR_RADIUS**2
        qi, vj = np.nonzero(close)
    else:
        grid_v = UniformGrid(world.pos[vsel], VEHICLE_PAIR_RADIUS)
        qi, vj = grid_v.query_many(world.pos[wsel], VEHICLE_PAIR_RADIUS)
    out = []
    for k in range(len(qi)):
        wi = wsel[qi[k]]
        vi = vsel[vj[k]]
        c, sn = math.cos(world.heading[vi]), math.sin(world.heading[vi])
        dx = world.pos[wi, 0] - world.pos[vi, 0]
        dy = world.pos[wi, 1] - world.pos[vi, 1]
        lx = min(max(c * dx + sn * dy, -VEHICLE_LENGTH / 2.0), VEHICLE_LENGTH / 2.0)
        ly = min(max(-sn * dx + c * dy, -VEHICLE_WIDTH / 2.0), VEHICLE_WIDTH / 2.0)
        refx = world.pos[vi, 0] + c * lx - sn * ly
        refy = world.pos[vi, 1] + sn * lx + c * ly
        r = PEDESTRIAN_RADIUS if world.kind[wi] == PEDESTRIAN else CYCLIST_RADIUS
        if math.hypot(world.pos[wi, 0] - refx, world.pos[wi, 1] - refy) <= r:
            out.append((int(world.ids[wi]), int(world.ids[vi])))
    return sorted(set(out))


def _zone_membership(world: WorldState) -> np.ndarray:
    ncw = len(world.index.crosswalk_ids)
    mask = np.zeros((world.n, ncw), dtype=bool)
    if ncw == 0 or world.n == 0:
        return mask
    wsel = world._selections()[1]
    if not len(wsel):
        return mask
    p = world.pos[wsel]
    for ci in range(ncw):
        x0, y0, x1, y1 = world.index.zone_bbox[ci]
        near = (p[:, 0] >= x0 - 0.5) & (p[:, 0] <= x1 + 0.5) & (p[:, 1] >= y0 - 0.5) & (p[:, 1] <= y1 + 0.5)
        if near.any():
            sub = wsel[near]
            mask[sub, ci] = world.index.zone_region[ci].contains(world.pos[sub])
    return mask


def detect_events(before: WorldState, after: WorldState) -> list[SimEvent]:
    """Discrete events implied by two consecutive states."""
    events: list[SimEvent] = []
    t = after.t
    index = after.index

    # signal phase change
    if before.scene.signal is not None:
        s0 = signal_state(before.scene.signal, before.t)
        s1 = signal_state(after.scene.signal, after.t)
        if s0 != s1:
            events.append(SimEvent(t=t, kind=EV_SIGNAL_CHANGE, payload={"from": s0, "to": s1}))

    if before.ids is after.ids or (
        len(before.ids) == len(after.ids) and np.array_equal(before.ids, after.ids)
    ):
        common = after.ids
        bi = ai = np.arange(len(common))
    else:
        common, bi, ai = np.intersect1d(before.ids, after.ids, return_indices=True)

    # emergency braking: applied deceleration above comfort, on transition
    if len(common):
        started = after.em_mask[ai] & ~before.em_mask[bi]
        for k in np.nonzero(started)[0]:
            decel = (before.speed[bi[k]] - after.speed[ai[k]]) / after.dt
            events.append(
                SimEvent(t=t, kind=EV_EMERGENCY_BRAKE, subjects=(int(common[k]),), payload={"decel": float(decel)})
            )
        yield_started = after.yield_mask[ai] & ~before.yield_mask[bi]
        for k in np.nonzero(yield_started)[0]:
            events.append(SimEvent(t=t, kind=EV_AV_YIELD, subjects=(int(common[k]),)))

    # crossing zone transitions
    ncw = after.zone_mask.shape[1]
    if ncw and len(common):
        zb = before.zone_mask[bi]
        za = after.zone_mask[ai]
        for ci in range(ncw):
            entered = za[:, ci] & ~zb[:, ci]
            exited = zb[:, ci] & ~za[:, ci]
            for k in np.nonzero(entered)[0]:
                events.append(
                    SimEvent(
                        t=t,
                        kind=EV_CROSSING_STARTED,
                        subjects=(int(common[k]),),
                        payload={"crosswalk": index.crosswalk_ids[ci]},
                    )
                )
            for k in np.nonzero(exited)[0]:
                p = after.pos[ai[k]]
                d_exit = math.dist(p, index.exit_anchor[ci])
                d_entry = math.dist(p, index.entry_anchor[ci])
                if d_exit < d_entry:
                    events.append(
                        SimEvent(
                            t=t,
                            kind=EV_CROSSING_COMPLETED,
                            subjects=(int(common[k]),),
                            payload={"crosswalk": index.crosswalk_ids[ci]},
                        )
                    )

    # accidents: geometric overlap, or an unavoidable conflict in the approach
    new_keys = []
    for ped_id, veh_id in overlap_pairs(after):
        key = (ped_id, veh_id)
        if key not in before.accident_keys:
            events.append(SimEvent(t=t, kind=EV_ACCIDENT, subjects=key, payload={"mode": "overlap"}))
            new_keys.append(key)
    if index.pieces and after.zone_mask.any():
        vsel = after._selections()[0]
        tblb = np.array([p.b_emergency for p in after.idm_params])
        for piece in index.pieces:
            candidates = np.nonzero(after.zone_mask[:, piece.crosswalk])[0]
            occupants = [
                int(i)
                for i, ok in zip(candidates, piece.region.contains(after.pos[candidates]))
                if ok
            ] if len(candidates) else []
            if not occupants:
                continue
            on_link = vsel[after.link[vsel] == piece.link]
            for vi in on_link:
                d = piece.s_entry - after.s[vi]
                if d <= 0:
                    continue
                required = after.speed[vi] ** 2 / (2.0 * d)
                if required > tblb[after.param_idx[vi]]:
                    key = (int(after.ids[occupants[0]]), int(after.ids[vi]))
                    if key not in before.accident_keys and key not in new_keys:
                        events.append(
                            SimEvent(
                                t=t,
                                kind=EV_ACCIDENT,
                                subjects=key,
                                payload={"mode": "unavoidable", "required_decel": float(required)},
                            )
                        )
                        new_keys.append(key)
    return events


def step(world: WorldState, commands: Optional[dict] = None, workers: int = 1) -> tuple[WorldState, list[SimEvent]]:
    """Advance one tick.

    All accelerations are computed from the state at t, then every agent is
    integrated semi-implicitly in ascending id order. `commands` maps agent
    ids to desired velocities for controlled agents and is applied at this
    tick. The result is bit-identical for any `workers` value.
    """
    n = world.n
    dt = world.dt
    desired_vel = world.desired_vel
    if commands:
        desired_vel = desired_vel.copy()
        for agent_id, v in commands.items():
            i = world.index_of(agent_id)
            if not world.controlled[i]:
                raise ValueError(f"agent {agent_id} is not externally controlled")
            desired_vel[i] = v
        world = replace(world, desired_vel=desired_vel)

    vsel, wsel = world._selections()

    acc_v = np.zeros(len(vsel))
    new_yield_v = np.zeros(len(vsel), dtype=bool)
    if len(vsel):
        # leader relations span the whole link, so vehicles run as one
        # vectorized pass regardless of the worker count
        acc_v, new_yield_v = _vehicle_accels(world, vsel)

    force_w = np.zeros((len(wsel), 2))
    if len(wsel):
        ctx = _WalkerContext(world, wsel, vsel)
        if workers > 1 and len(wsel) >= 4 * workers:
            # row-chunked execution: every chunk sees all sources and writes
            # disjoint rows, so the result matches the single-worker pass bit
            # for bit
            from concurrent.futures import ThreadPoolExecutor

            bounds = np.linspace(0, len(wsel), workers + 1, dtype=int)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(
                    pool.map(lambda k: _walker_accels_range(ctx, bounds[k], bounds[k + 1]), range(workers))
                )
            force_w = np.concatenate(parts, axis=0)
        else:
            force_w = _walker_accels_range(ctx, 0, len(wsel))

    # integrate vehicles along their links
    speed = world.speed.copy()
    s = world.s.copy()
    pos = world.pos.copy()
    vel = world.vel.copy()
    heading = world.heading.copy()
    em_mask = np.zeros(n, dtype=bool)
    yield_mask = np.zeros(n, dtype=bool)
    if len(vsel):
        p_b = np.array([p.b for p in world.idm_params])[world.param_idx[vsel]]
        new_speed = np.maximum(speed[vsel] + acc_v * dt, 0.0)
        em_mask[vsel] = (speed[vsel] - new_speed) / dt > p_b + 1e-12
        yield_mask[vsel] = new_yield_v
        speed[vsel] = new_speed
        s[vsel] = s[vsel] + new_speed * dt
        link_v = world.link[vsel]
        lengths = world.index.length[link_v]
        looped = world.index.loop[link_v]
        wrap = looped & (s[vsel] >= lengths)
        if wrap.any():
            sv = s[vsel]
            sv[wrap] = sv[wrap] - lengths[wrap]
            s[vsel] = sv
        vpos, vheading = world.index.positions_for(link_v, s[vsel] - VEHICLE_LENGTH / 2.0)
        pos[vsel] = vpos
        heading[vsel] = vheading
        vel[vsel] = np.stack([np.cos(vheading), np.sin(vheading)], axis=1) * speed[vsel, None]

    # integrate walkers with the hard speed cap and walkable-region containment
    if len(wsel):
        tblmax = np.array([p.v_max for p in world.sf_params])[world.param_idx[wsel]]
        v_new = vel[wsel] + force_w * dt
        sp = np.sqrt(v_new[:, 0] ** 2 + v_new[:, 1] ** 2)
        over = sp > tblmax
        if over.any():
            v_new[over] *= (tblmax[over] / sp[over])[:, None]
            sp[over] = tblmax[over]
        p_new = pos[wsel] + v_new * dt
        if world.index.permitted.ok is not None:
            ok = world.index.permitted.test(p_new)
            if not ok.all():
                bad = ~ok
                p_new[bad] = pos[wsel][bad]
                v_new[bad] = 0.0
                sp = np.sqrt(v_new[:, 0] ** 2 + v_new[:, 1] ** 2)
        pos[wsel] = p_new
        vel[wsel] = v_new
        speed[wsel] = sp
        moving = sp > MIN_WALK_SPEED_FOR_HEADING
        hw = heading[wsel]
        hw[moving] = np.arctan2(v_new[moving, 1], v_new[moving, 0])
        heading[wsel] = hw

    after = replace(
        world,
        t=(world.tick + 1) / world.hz,
        tick=world.tick + 1,
        pos=pos,
        vel=vel,
        heading=heading,
        s=s,
        speed=speed,
        em_mask=em_mask,
        yield_mask=yield_mask,
    )
    after = replace(after, zone_mask=_zone_membership(after))
    events = detect_events(world, after)
    new_keys = frozenset(tuple(ev.subjects) for ev in events if ev.kind == EV_ACCIDENT)
    if new_keys:
        after = replace(after, accident_keys=world.accident_keys | new_keys)

    # vehicles leaving a finite link despawn
    if len(vsel):
        gone = np.zeros(n, dtype=bool)
        link_v = after.link[vsel]
        done = (~world.index.loop[link_v]) & (after.s[vsel] > world.index.length[link_v])
        gone[vsel] = done
        if gone.any():
            after = _filter_world(after, ~gone)
    return after, events


def run_steps(world: WorldState, n_steps: int, workers: int = 1) -> tuple[WorldState, list[SimEvent]]:
    events: list[SimEvent] = []
    for _ in range(n_steps):
        world, ev = step(world, workers=workers)
        events.extend(ev)
    return world, events
