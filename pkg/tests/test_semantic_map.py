import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beliefmap.errors import ClassMismatch, EmptyPointSet, IoFailure, ParseError, UnknownObject
from beliefmap.persistence import PersistenceBelief
from beliefmap.semantic_map import (
    SemanticMap,
    compute_centroid,
    compute_extent,
    export_map,
    load_map,
    parse_map,
    snapshot,
)
from beliefmap.types import BoundingBox

BOX = BoundingBox(0, 0, 10, 10)


def test_centroid_examples():
    assert compute_centroid([[1, 2, 3]]).tolist() == [1, 2, 3]
    assert compute_centroid([[0, 0, 0], [2, 0, 0]]).tolist() == [1, 0, 0]
    pts = np.random.default_rng(0).normal(size=(100, 3))
    ref = [sum(p[i] for p in pts.tolist()) / 100 for i in range(3)]
    assert np.allclose(compute_centroid(pts), ref, atol=1e-12)
    with pytest.raises(EmptyPointSet):
        compute_centroid(np.empty((0, 3)))


def test_extent_examples():
    x = np.arange(100) / 100
    pts = np.stack([x, np.zeros(100), np.zeros(100)], axis=1)
    assert compute_extent(pts)[0] == pytest.approx(0.95, abs=1e-12)
    few = np.stack([np.linspace(0, 2, 10), np.zeros(10), np.zeros(10)], axis=1)
    assert compute_extent(few)[0] == pytest.approx(2.0)
    assert compute_extent(np.ones((30, 3))).tolist() == [0, 0, 0]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 200), st.integers(0, 10**6))
def test_extent_invariances(n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    e = compute_extent(pts)
    assert np.all(e >= 0)
    assert np.allclose(compute_extent(pts + rng.normal(size=3) * 10), e, atol=1e-9)
    assert np.array_equal(compute_extent(pts[rng.permutation(n)]), e)


def _obj(smap, cls=56, center=(0, 0, 0), n=30):
    pts = smap.add_points(np.asarray(center) + np.random.default_rng(n).normal(scale=0.1, size=(n, 3)), 0, cls)
    return smap.create_map_object(cls, BOX, pts, 0)


def test_create_map_object():
    smap = SemanticMap()
    a, b = _obj(smap), _obj(smap)
    assert a.belief.bel == 0.5 and b.id > a.id
    assert not any(smap.points[p].active for p in a.mappoint_ids)
    assert np.array_equal(a.track.x[:3], a.centroid)
    mixed = smap.add_points(np.zeros((1, 3)), 0, 56) + smap.add_points(np.zeros((1, 3)), 0, 62)
    with pytest.raises(ClassMismatch):
        smap.create_map_object(56, BOX, mixed, 0)
    with pytest.raises(EmptyPointSet):
        smap.create_map_object(56, BOX, [], 0)


def test_refresh_object():
    smap = SemanticMap()
    obj = _obj(smap)
    smap.insert(obj)
    new = smap.add_points(np.full((30, 3), 1.0), 3, 56)
    smap.refresh_object(obj.id, new, 3)
    assert len(obj.mappoint_ids) == 60 and obj.last_seen_keyframe == 3
    assert obj.centroid == pytest.approx(compute_centroid(smap.positions(obj.mappoint_ids)))
    smap.check_integrity()
    with pytest.raises(UnknownObject):
        smap.refresh_object(999, [], 3)
    with pytest.raises(ClassMismatch):
        smap.refresh_object(obj.id, smap.add_points(np.zeros((1, 3)), 3, 56) + smap.add_points(np.zeros((1, 3)), 3, 62), 3)
    assert len(obj.mappoint_ids) == 60


def test_export_gating_and_roundtrip(tmp_path):
    smap = SemanticMap()
    smap.add_points(np.zeros((3, 3)), 0)
    hi, lo = _obj(smap, 56, (1, 0, 0)), _obj(smap, 62, (0, 2, 0))
    hi.belief, lo.belief = PersistenceBelief(0.9), PersistenceBelief(0.2)
    for o in (hi, lo):
        smap.insert(o)
        smap.gate(o)
    doc = snapshot(smap, "abc")
    assert [o.id for o in doc.objects] == [hi.id]
    assert all(p.object_id in (None, hi.id) for p in doc.points)
    assert len(doc.points) == 3 + len(hi.mappoint_ids)
    path = tmp_path / "map.txt"
    text = export_map(smap, path, "abc")
    back = load_map(path)
    assert back.objects == doc.objects and back.points == doc.points and back.config_hash == "abc"
    assert export_map(back) == export_map(doc) == text


def test_empty_map_export():
    doc = parse_map(export_map(SemanticMap()))
    assert doc.objects == [] and doc.points == []


def test_parse_and_io_errors(tmp_path):
    with pytest.raises(ParseError) as e:
        parse_map("# header\nobject 1 2 3\n")
    assert e.value.line == 2
    with pytest.raises(IoFailure):
        load_map(tmp_path / "missing.txt")
    with pytest.raises(IoFailure):
        export_map(SemanticMap(), tmp_path / "no" / "dir" / "map.txt")


def test_integrity_detects_dangling_point():
    smap = SemanticMap()
    obj = _obj(smap)
    smap.insert(obj)
    smap.points[next(iter(obj.mappoint_ids))].object_id = 12345
    with pytest.raises(AssertionError):
        smap.check_integrity()
