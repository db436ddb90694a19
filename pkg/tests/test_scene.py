import json
import math

import pytest
from hypothesis import given, strategies as st
from shapely.geometry import Polygon

from crossim import bundled_scene_text
from crossim.scene import (
    CLEARANCE,
    VEHICLE_GREEN,
    WALK_GREEN,
    SceneFormatError,
    SceneValidationError,
    SignalPhase,
    SignalPlan,
    conflict_zone,
    load_scene,
    save_scene,
    signal_state,
)

PLAN = SignalPlan(phases=(SignalPhase(30.0, 5.0, 20.0),))


def test_bundled_scene_loads(scene):
    assert len(scene.links) == 2
    assert len(scene.crosswalks) == 1
    assert scene.signal is not None
    assert scene.crosswalks[0].crossed_links == ("approach_near", "approach_far")


def test_save_load_roundtrip_identity(scene):
    again = load_scene(save_scene(scene))
    assert again == scene
    assert load_scene(save_scene(again)) == again


def test_malformed_document_is_a_format_error():
    with pytest.raises(SceneFormatError):
        load_scene("{not json")
    with pytest.raises(SceneFormatError):
        load_scene(json.dumps({"links": [{"id": "x"}]}))


def test_link_with_unknown_node_fails_validation():
    doc = json.loads(bundled_scene_text())
    doc["links"][0]["from"] = "nowhere"
    with pytest.raises(SceneValidationError, match="unknown node"):
        load_scene(json.dumps(doc))


def test_duplicate_node_ids_fail():
    doc = json.loads(bundled_scene_text())
    doc["nodes"].append(dict(doc["nodes"][0]))
    with pytest.raises(SceneValidationError, match="duplicate node"):
        load_scene(json.dumps(doc))


def test_anchor_off_boundary_fails():
    doc = json.loads(bundled_scene_text())
    doc["crosswalks"][0]["entry_anchor"] = [1.5, -2.0]
    with pytest.raises(SceneValidationError, match="anchor"):
        load_scene(json.dumps(doc))


def test_crosswalk_must_touch_a_crossed_link():
    doc = json.loads(bundled_scene_text())
    doc["crosswalks"][0]["polygon"] = [[500, 50], [503, 50], [503, 57], [500, 57]]
    doc["crosswalks"][0]["entry_anchor"] = [501.5, 50]
    doc["crosswalks"][0]["exit_anchor"] = [501.5, 57]
    with pytest.raises(SceneValidationError, match="intersect"):
        load_scene(json.dumps(doc))


def test_walk_area_must_be_simple():
    doc = json.loads(bundled_scene_text())
    doc["walk_area"] = [[0, 0], [10, 10], [10, 0], [0, 10]]  # bowtie
    with pytest.raises(SceneValidationError, match="walk_area"):
        load_scene(json.dumps(doc))


def test_signal_state_first_phase_is_vehicle_green():
    assert signal_state(PLAN, 0.0) == VEHICLE_GREEN


def test_signal_state_left_closed_boundaries():
    assert signal_state(PLAN, 29.999) == VEHICLE_GREEN
    assert signal_state(PLAN, 30.0) == CLEARANCE
    assert signal_state(PLAN, 34.9) == CLEARANCE
    assert signal_state(PLAN, 35.0) == WALK_GREEN
    assert signal_state(PLAN, 54.999) == WALK_GREEN
    assert signal_state(PLAN, 55.0) == VEHICLE_GREEN


def test_signal_state_periodicity_at_cycle_multiples():
    for k in range(4):
        assert signal_state(PLAN, 55.0 + k * 55.0) == signal_state(PLAN, 55.0)


@given(st.floats(min_value=0.0, max_value=1e4, allow_nan=False))
def test_signal_state_is_periodic(t):
    assert signal_state(PLAN, t) == signal_state(PLAN, t + PLAN.cycle_length)


def test_signal_negative_time_rejected():
    with pytest.raises(ValueError):
        signal_state(PLAN, -0.1)


def test_conflict_zone_is_link_slice(scene):
    zone = Polygon(conflict_zone(scene, "main"))
    # crosswalk is 3 m wide along two 3.5 m lanes: a 3 x 7 m conflict region
    assert zone.area == pytest.approx(21.0, abs=0.05)
    minx, miny, maxx, maxy = zone.bounds
    assert maxy - miny == pytest.approx(7.0, abs=0.02)
    assert maxx - minx == pytest.approx(3.0, abs=0.02)


def test_conflict_zone_area_never_exceeds_crosswalk(scene):
    zone = Polygon(conflict_zone(scene, "main"))
    cw = Polygon(scene.crosswalks[0].polygon)
    assert zone.area <= cw.area + 1e-9


def test_conflict_zone_subset_case():
    # crosswalk fully inside one link footprint: zone equals the crosswalk
    doc = json.loads(bundled_scene_text())
    doc["crosswalks"][0]["polygon"] = [[0.0, -3.0], [3.0, -3.0], [3.0, -0.5], [0.0, -0.5]]
    doc["crosswalks"][0]["entry_anchor"] = [1.5, -3.0]
    doc["crosswalks"][0]["exit_anchor"] = [1.5, -0.5]
    doc["crosswalks"][0]["crossed_links"] = ["approach_near"]
    scene2 = load_scene(json.dumps(doc))
    zone = Polygon(conflict_zone(scene2, "main"))
    assert zone.area == pytest.approx(Polygon(scene2.crosswalks[0].polygon).area, rel=1e-6)


def test_conflict_zone_unknown_id(scene):
    with pytest.raises(KeyError):
        conflict_zone(scene, "nope")


def test_zone_width_along_vehicle_axis_matches_lane(scene):
    # geometric oracle: intersect the crosswalk with one lane footprint directly
    cw = Polygon(scene.crosswalks[0].polygon)
    lane = scene.link("approach_near").footprint()
    piece = cw.intersection(lane)
    miny, maxy = piece.bounds[1], piece.bounds[3]
    assert maxy - miny == pytest.approx(3.5, abs=0.01)
