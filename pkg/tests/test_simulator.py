import numpy as np
import pytest
from scenario_cache import simulated

from beliefmap.errors import InvalidScenario
from beliefmap.simulator import SCENARIOS, generate, load_spec, scenario, spec_from_dict
from beliefmap.tracker import TrackerConfig
from beliefmap.types import project

CHANGING = ("OneChair", "Vanishing", "Changing", "Shift", "Replacing")


def test_static_has_no_events():
    spec = scenario("Static", 0, 100)
    _, gt = generate(spec)
    assert spec.object_events == () and gt.present.all()


def test_onechair_displacement_matches_command():
    spec = scenario("OneChair", 1)
    (move,) = [e for e in spec.object_events if e.action == "move_to"]
    _, gt, _ = simulated("OneChair", 1)
    k = gt.object_index("chair")
    start = np.array(spec.objects[k].position)
    before, after = gt.centroids[move.frame_id - 1, k], gt.centroids[move.frame_id, k]
    assert np.allclose(before, start)
    assert np.allclose(after - before, np.array(move.position) - start, atol=1e-12)
    det_before = [f for f in range(move.frame_id) if k in gt.detection_sources[f]]
    det_after = [f for f in range(move.frame_id, len(gt.timestamps)) if k in gt.detection_sources[f]]
    assert det_before and det_after
    assert np.allclose(gt.centroids[det_after[0], k] - gt.centroids[det_before[-1], k], after - before)


def test_deterministic_given_seed():
    a, _ = generate(scenario("Static", 3, 30))
    b, _ = generate(scenario("Static", 3, 30))
    c, _ = generate(scenario("Static", 4, 30))
    for f in (0, 17, 29):
        fa, fb, fc = a.frame(f), b.frame(f), c.frame(f)
        assert np.array_equal(fa.keypoints.u, fb.keypoints.u) and np.array_equal(fa.keypoints.depth, fb.keypoints.depth)
        assert np.array_equal(fa.depth_lookup.grid, fb.depth_lookup.grid) and fa.detections == fb.detections
        assert not np.array_equal(fa.keypoints.u, fc.keypoints.u)


def test_invalid_scenarios(tmp_path):
    with pytest.raises(InvalidScenario):
        scenario("Nope")
    with pytest.raises(InvalidScenario):
        spec_from_dict({"name": "Static", "colour": "red"})
    _, gt, _ = simulated("OneChair", 1)
    k = gt.object_index("chair")
    seen = next(f for f in range(len(gt.timestamps)) if k in gt.detection_sources[f])
    bad = spec_from_dict({"name": "OneChair", "events": [
        {"frame": seen, "object": "chair", "action": "move_to", "position": [0, 1.8, 0.45]}]})
    with pytest.raises(InvalidScenario):
        generate(bad)
    with pytest.raises(InvalidScenario):
        spec_from_dict({"name": "Static", "events": [{"frame": 1, "object": "ghost", "action": "remove"}]})


def test_custom_spec_file(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("name: Static\nseed: 4\nframe_count: 12\nobjects:\n"
                 "  - {name: box, kind: suitcase, position: [1.8, 0.0, 0.3]}\n")
    spec = load_spec(p)
    stream, gt = generate(spec)
    assert spec.seed == 4 and len(stream) == 12 and gt.object_names == ("box",)


@pytest.mark.parametrize("name", SCENARIOS)
def test_ground_truth_invariants(name):
    stream, gt, frames = simulated(name, 1)
    intr = stream.intrinsics
    for f, frame in enumerate(frames):
        assert len(frame.detections) == len(gt.detection_sources[f])
        for det, k in zip(frame.detections, gt.detection_sources[f]):
            assert gt.present[f, k] and det.class_id == gt.object_classes[k]
            u, v, z = project(gt.centroids[f, k], intr, frame.camera_pose)
            assert z > 0 and det.box.contains(u, v)
    if name in CHANGING:
        speed = np.linalg.norm(gt.velocities, axis=2)
        assert np.all(speed == 0)
        for f in range(1, len(frames)):
            for k in range(len(gt.object_names)):
                changed = gt.present[f, k] != gt.present[f - 1, k] or not np.array_equal(
                    gt.centroids[f, k], gt.centroids[f - 1, k])
                if changed:
                    assert k not in gt.detection_sources[f] and k not in gt.detection_sources[f - 1]
    if name == "WalkingPerson":
        k = gt.object_classes.index(0)
        assert np.all(np.linalg.norm(gt.velocities[:, k], axis=1) > TrackerConfig().doc_threshold)
