"""Static world description: road network, crosswalk geometry, signal plan, spawn points.

Scenes are immutable after loading and safe to share between sessions. The
document format is plain JSON with top-level keys ``nodes``, ``links``,
``crosswalks``, ``spawns``, ``signal``, ``walk_area`` and ``obstacles``.
Lengths are metres, speeds m/s, durations seconds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

from shapely.geometry import LineString, Point, Polygon
from shapely.ops import unary_union

Point2 = tuple[float, float]

# phase indicators returned by signal_state
VEHICLE_GREEN = "vehicle_green"
CLEARANCE = "clearance"
WALK_GREEN = "walk_green"

ENDPOINT_TOL = 0.01  # m, centerline endpoints must coincide with node positions
ANCHOR_TOL = 0.05    # m, crossing anchors must sit on the crosswalk boundary


class SceneError(ValueError):
    """Base class for scene loading problems."""


class SceneFormatError(SceneError):
    """The document is not well-formed (bad JSON, missing keys, wrong types)."""


class SceneValidationError(SceneError):
    """The document parsed but violates a scene invariant."""


def _point(value, what: str) -> Point2:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise SceneFormatError(f"{what}: expected a 2-D point, got {value!r}")
    return (float(value[0]), float(value[1]))


def _polyline(value, what: str) -> tuple[Point2, ...]:
    if not isinstance(value, (list, tuple)) or len(value) < 2:
        raise SceneFormatError(f"{what}: expected at least two points")
    return tuple(_point(p, what) for p in value)


@dataclass(frozen=True)
class Node:
    id: str
    position: Point2


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    lane_count: int
    lane_width: float
    speed_limit: float
    centerline: tuple[Point2, ...]

    @property
    def width(self) -> float:
        return self.lane_count * self.lane_width

    @property
    def length(self) -> float:
        pts = self.centerline
        return sum(math.dist(pts[i], pts[i + 1]) for i in range(len(pts) - 1))

    def footprint(self) -> Polygon:
        return LineString(self.centerline).buffer(self.width / 2.0, cap_style="flat")


@dataclass(frozen=True)
class Crosswalk:
    id: str
    polygon: tuple[Point2, ...]
    entry_anchor: Point2
    exit_anchor: Point2
    crossed_links: tuple[str, ...]

    def shape(self) -> Polygon:
        return Polygon(self.polygon)


@dataclass(frozen=True)
class SignalPhase:
    vehicle_green_s: float
    clearance_s: float
    walk_green_s: float

    @property
    def duration(self) -> float:
        return self.vehicle_green_s + self.clearance_s + self.walk_green_s


@dataclass(frozen=True)
class SignalPlan:
    phases: tuple[SignalPhase, ...]
    cycle_offset_s: float = 0.0

    @property
    def cycle_length(self) -> float:
        return sum(p.duration for p in self.phases)


# 30/5/20 is typical minor urban intersection timing; scenes may override.
DEFAULT_SIGNAL = SignalPlan(phases=(SignalPhase(30.0, 5.0, 20.0),))


@dataclass(frozen=True)
class SpawnPoint:
    id: str
    kind: str  # vehicle | pedestrian | cyclist
    link: Optional[str] = None
    position: Optional[Point2] = None


@dataclass(frozen=True)
class Scene:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    crosswalks: tuple[Crosswalk, ...]
    spawns: tuple[SpawnPoint, ...]
    signal: Optional[SignalPlan]
    walk_area: tuple[Point2, ...]
    obstacles: tuple[tuple[Point2, ...], ...]

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"unknown node {node_id!r}")

    def link(self, link_id: str) -> Link:
        for l in self.links:
            if l.id == link_id:
                return l
        raise KeyError(f"unknown link {link_id!r}")

    def crosswalk(self, crosswalk_id: str) -> Crosswalk:
        for c in self.crosswalks:
            if c.id == crosswalk_id:
                return c
        raise KeyError(f"unknown crosswalk {crosswalk_id!r}")

    def walk_polygon(self) -> Polygon:
        return Polygon(self.walk_area)


def _parse_signal(doc) -> SignalPlan:
    try:
        phases = tuple(
            SignalPhase(
                vehicle_green_s=float(p["vehicle_green_s"]),
                clearance_s=float(p["clearance_s"]),
                walk_green_s=float(p["walk_green_s"]),
            )
            for p in doc["phases"]
        )
        return SignalPlan(phases=phases, cycle_offset_s=float(doc.get("cycle_offset_s", 0.0)))
    except (KeyError, TypeError) as exc:
        raise SceneFormatError(f"signal: {exc}") from exc


def parse_scene(doc: dict) -> Scene:
    """Build a Scene from a parsed document without validating invariants."""
    if not isinstance(doc, dict):
        raise SceneFormatError("scene document must be a JSON object")
    try:
        nodes = tuple(Node(id=n["id"], position=_point(n["position"], "node")) for n in doc.get("nodes", []))
        links = tuple(
            Link(
                id=l["id"],
                from_node=l["from"],
                to_node=l["to"],
                lane_count=int(l["lane_count"]),
                lane_width=float(l["lane_width"]),
                speed_limit=float(l["speed_limit"]),
                centerline=_polyline(l["centerline"], "link centerline"),
            )
            for l in doc.get("links", [])
        )
        crosswalks = tuple(
            Crosswalk(
                id=c["id"],
                polygon=_polyline(c["polygon"], "crosswalk polygon"),
                entry_anchor=_point(c["entry_anchor"], "entry anchor"),
                exit_anchor=_point(c["exit_anchor"], "exit anchor"),
                crossed_links=tuple(c["crossed_links"]),
            )
            for c in doc.get("crosswalks", [])
        )
        spawns = tuple(
            SpawnPoint(
                id=s["id"],
                kind=s["kind"],
                link=s.get("link"),
                position=_point(s["position"], "spawn position") if s.get("position") is not None else None,
            )
            for s in doc.get("spawns", [])
        )
        signal = _parse_signal(doc["signal"]) if doc.get("signal") is not None else None
        walk_area = _polyline(doc["walk_area"], "walk_area") if doc.get("walk_area") else ()
        obstacles = tuple(_polyline(o, "obstacle") for o in doc.get("obstacles", []))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneFormatError(f"malformed scene document: {exc}") from exc
    return Scene(nodes, links, crosswalks, spawns, signal, walk_area, obstacles)


def validate_scene(scene: Scene) -> None:
    """Check every scene invariant, raising on the first violation found."""
    seen = set()
    for n in scene.nodes:
        if n.id in seen:
            raise SceneValidationError(f"duplicate node id {n.id!r}")
        seen.add(n.id)
    node_ids = seen

    seen = set()
    for link in scene.links:
        if link.id in seen:
            raise SceneValidationError(f"duplicate link id {link.id!r}")
        seen.add(link.id)
        if link.from_node not in node_ids or link.to_node not in node_ids:
            raise SceneValidationError(f"link {link.id!r}: unknown node")
        if link.length <= 0.0:
            raise SceneValidationError(f"link {link.id!r}: zero length")
        if link.speed_limit <= 0.0:
            raise SceneValidationError(f"link {link.id!r}: speed_limit must be > 0")
        if link.lane_count < 1 or link.lane_width <= 0.0:
            raise SceneValidationError(f"link {link.id!r}: bad lane configuration")
        a = scene.node(link.from_node).position
        b = scene.node(link.to_node).position
        if math.dist(link.centerline[0], a) > ENDPOINT_TOL or math.dist(link.centerline[-1], b) > ENDPOINT_TOL:
            raise SceneValidationError(f"link {link.id!r}: centerline endpoints do not coincide with nodes")

    link_ids = {l.id for l in scene.links}
    for cw in scene.crosswalks:
        poly = Polygon(cw.polygon)
        if not poly.is_valid or poly.area <= 0.0:
            raise SceneValidationError(f"crosswalk {cw.id!r}: polygon is not simple")
        if not cw.crossed_links:
            raise SceneValidationError(f"crosswalk {cw.id!r}: crossed_links is empty")
        for lid in cw.crossed_links:
            if lid not in link_ids:
                raise SceneValidationError(f"crosswalk {cw.id!r}: unknown link {lid!r}")
        footprints = unary_union([scene.link(lid).footprint() for lid in cw.crossed_links])
        if not poly.intersects(footprints):
            raise SceneValidationError(f"crosswalk {cw.id!r}: does not intersect any crossed link footprint")
        boundary = poly.exterior
        for name, anchor in (("entry", cw.entry_anchor), ("exit", cw.exit_anchor)):
            if boundary.distance(Point(anchor)) > ANCHOR_TOL:
                raise SceneValidationError(f"crosswalk {cw.id!r}: {name} anchor not on polygon boundary")

    for sp in scene.spawns:
        if sp.kind not in ("vehicle", "pedestrian", "cyclist"):
            raise SceneValidationError(f"spawn {sp.id!r}: unknown kind {sp.kind!r}")
        if sp.kind == "vehicle" and (sp.link is None or sp.link not in link_ids):
            raise SceneValidationError(f"spawn {sp.id!r}: vehicle spawn needs a valid link")

    if scene.walk_area:
        wa = Polygon(scene.walk_area)
        if not wa.is_valid or wa.area <= 0.0:
            raise SceneValidationError("walk_area is not a simple polygon")
    for i, ob in enumerate(scene.obstacles):
        if not Polygon(ob).is_valid:
            raise SceneValidationError(f"obstacle {i} is not a simple polygon")

    if scene.signal is not None:
        for ph in scene.signal.phases:
            if min(ph.vehicle_green_s, ph.clearance_s, ph.walk_green_s) <= 0.0:
                raise SceneValidationError("signal phase durations must be > 0")


def load_scene(document: str) -> Scene:
    """Parse and validate a scene document."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid JSON: {exc}") from exc
    scene = parse_scene(doc)
    validate_scene(scene)
    return scene


def load_scene_file(path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scene(fh.read())


def scene_to_dict(scene: Scene) -> dict:
    doc = {
        "nodes": [{"id": n.id, "position": list(n.position)} for n in scene.nodes],
        "links": [
            {
                "id": l.id,
                "from": l.from_node,
                "to": l.to_node,
                "lane_count": l.lane_count,
                "lane_width": l.lane_width,
                "speed_limit": l.speed_limit,
                "centerline": [list(p) for p in l.centerline],
            }
            for l in scene.links
        ],
        "crosswalks": [
            {
                "id": c.id,
                "polygon": [list(p) for p in c.polygon],
                "entry_anchor": list(c.entry_anchor),
                "exit_anchor": list(c.exit_anchor),
                "crossed_links": list(c.crossed_links),
            }
            for c in scene.crosswalks
        ],
        "spawns": [
            {
                "id": s.id,
                "kind": s.kind,
                **({"link": s.link} if s.link is not None else {}),
                **({"position": list(s.position)} if s.position is not None else {}),
            }
            for s in scene.spawns
        ],
        "signal": (
            {
                "phases": [
                    {
                        "vehicle_green_s": p.vehicle_green_s,
                        "clearance_s": p.clearance_s,
                        "walk_green_s": p.walk_green_s,
                    }
                    for p in scene.signal.phases
                ],
                "cycle_offset_s": scene.signal.cycle_offset_s,
            }
            if scene.signal is not None
            else None
        ),
        "walk_area": [list(p) for p in scene.walk_area],
        "obstacles": [[list(p) for p in ob] for ob in scene.obstacles],
    }
    return doc


def save_scene(scene: Scene) -> str:
    """Serialize to the canonical document form (round-trips through load_scene)."""
    return json.dumps(scene_to_dict(scene), indent=2)


def signal_state(plan: SignalPlan, t: float) -> str:
    """Phase indicator at time t. Intervals are closed on the left, periodic in the cycle."""
    if t < 0.0:
        raise ValueError("t must be >= 0")
    u = (t + plan.cycle_offset_s) % plan.cycle_length
    for ph in plan.phases:
        if u < ph.vehicle_green_s:
            return VEHICLE_GREEN
        u -= ph.vehicle_green_s
        if u < ph.clearance_s:
            return CLEARANCE
        u -= ph.clearance_s
        if u < ph.walk_green_s:
            return WALK_GREEN
        u -= ph.walk_green_s
    return VEHICLE_GREEN  # unreachable for valid plans; guards float edge at cycle end


def conflict_zone(scene: Scene, crosswalk_id: str) -> list[Point2]:
    """Region where the crossing overlaps the footprints of its crossed links.

    Returns the exterior ring of the intersection polygon (counterclockwise,
    without the closing point).
    """
    cw = scene.crosswalk(crosswalk_id)  # raises KeyError for unknown ids
    footprints = unary_union([scene.link(lid).footprint() for lid in cw.crossed_links])
    zone = cw.shape().intersection(footprints)
    if zone.is_empty:
        raise SceneValidationError(f"crosswalk {crosswalk_id!r}: empty conflict zone")
    if zone.geom_type == "MultiPolygon":
        zone = max(zone.geoms, key=lambda g: g.area).union(zone)
        zone = zone.convex_hull
    ring = list(zone.exterior.coords)[:-1]
    return [(float(x), float(y)) for x, y in ring]
