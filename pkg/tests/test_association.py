import itertools

import numpy as np
import pytest

from beliefmap.association import AssociationConfig, associate_long_term, associate_short_term
from beliefmap.errors import EmptyObject
from beliefmap.semantic_map import SemanticMap
from beliefmap.types import BoundingBox, Detection, iou

CFG = AssociationConfig()
BOX = BoundingBox(0, 0, 10, 10)


def test_short_term_single_match():
    det = Detection(BoundingBox(0, 0, 10, 10), 56)
    last = [(7, 56, BoundingBox(1, 0, 10, 10))]
    assert iou(det.box, last[0][2]) > 0.5
    r = associate_short_term([det], last, AssociationConfig(iou_threshold=0.5))
    assert r.matches == ((0, 7),) and r.new_objects == ()


def test_short_term_no_previous_objects():
    r = associate_short_term([Detection(BOX, 56)], [], CFG)
    assert r.matches == () and r.new_objects == (0,)


def test_short_term_greedy_first_claim():
    old = BoundingBox(0, 0, 100, 100)
    d0 = Detection(BoundingBox(0, 0, 70, 100), 56)  # IoU 0.7
    d1 = Detection(BoundingBox(0, 0, 60, 100), 56)  # IoU 0.6
    assert iou(d0.box, old) == pytest.approx(0.7) and iou(d1.box, old) == pytest.approx(0.6)
    r = associate_short_term([d0, d1], [(3, 56, old)], CFG)
    assert r.matches == ((0, 3),) and r.new_objects == (1,)
    # brute force over claim orders: scanning detections in order, the first claim wins
    for order in itertools.permutations([0, 1]):
        first = order[0]
        if first == 0:
            assert r.matches[0][0] == first


def test_short_term_class_gate():
    r = associate_short_term([Detection(BOX, 62)], [(1, 56, BOX)], CFG)
    assert r.matches == () and r.new_objects == (0,)


def _candidate(smap, cls, center, n=5, kf=0):
    pts = smap.add_points(np.asarray(center) + np.zeros((n, 3)), kf, cls)
    return smap.create_map_object(cls, BOX, pts, kf)


def test_long_term_merge_within_threshold():
    smap = SemanticMap()
    old = _candidate(smap, 56, [0, 0, 2.05])
    smap.insert(old)
    cand = _candidate(smap, 56, [0, 0, 2.0])
    (act,) = associate_long_term([cand], smap, 1, CFG)
    assert act.merged and act.target_id == old.id
    assert act.distance == pytest.approx(0.05)
    assert len(old.mappoint_ids) == 10 and cand.mappoint_ids == set()
    assert old.centroid == pytest.approx([0, 0, 2.025])
    smap.check_integrity()


def test_long_term_class_gate_and_distance():
    smap = SemanticMap()
    smap.insert(_candidate(smap, 62, [0, 0, 2.0]))
    cand = _candidate(smap, 56, [0, 0, 2.01])
    (act,) = associate_long_term([cand], smap, 1, CFG)
    assert not act.merged and cand.id in smap.objects
    far = _candidate(smap, 56, [3, 0, 2.0])
    (act,) = associate_long_term([far], smap, 1, CFG)
    assert not act.merged


def test_long_term_nearest_target_and_older_id_kept():
    smap = SemanticMap()
    a = _candidate(smap, 56, [0, 0, 0])
    b = _candidate(smap, 56, [0.3, 0, 0])
    smap.insert(a)
    smap.insert(b)
    cand = _candidate(smap, 56, [0.25, 0, 0])
    (act,) = associate_long_term([cand], smap, 1, CFG)
    assert act.target_id == b.id and cand.id in smap.aliases


def test_belief_updates_only_when_unseen_for_n_keyframes():
    smap = SemanticMap()
    obj = _candidate(smap, 56, [0, 0, 0], kf=0)
    smap.insert(obj)
    (act,) = associate_long_term([_candidate(smap, 56, [0, 0, 0], kf=5)], smap, 5, CFG)
    assert act.belief_before == act.belief_after == 0.5 and act.gating is None
    (act,) = associate_long_term([_candidate(smap, 56, [0, 0, 0], kf=11)], smap, 11, CFG)
    assert act.belief_after == pytest.approx(0.95)
    assert act.gating is not None and act.gating.active
    assert all(smap.points[p].active for p in obj.mappoint_ids)


def test_long_term_idempotent_and_empty_candidate():
    smap = SemanticMap()
    smap.insert(_candidate(smap, 56, [0, 0, 0]))
    cands = [_candidate(smap, 56, [0.1, 0, 0]), _candidate(smap, 62, [1, 1, 1])]
    first = associate_long_term(cands, smap, 3, CFG)
    assert [a.merged for a in first] == [True, False]
    assert associate_long_term(cands, smap, 4, CFG) == []
    empty = _candidate(smap, 56, [5, 5, 5])
    empty.mappoint_ids = set()
    with pytest.raises(EmptyObject):
        associate_long_term([empty], smap, 5, CFG)


def test_ids_never_reused():
    smap = SemanticMap()
    a = _candidate(smap, 56, [0, 0, 0])
    smap.insert(a)
    smap.remove(a.id)
    b = _candidate(smap, 56, [0, 0, 0])
    assert b.id > a.id


def test_config_validation():
    with pytest.raises(ValueError):
        AssociationConfig(iou_threshold=1.0)
    with pytest.raises(ValueError):
        AssociationConfig(keyframe_window_n=0)
