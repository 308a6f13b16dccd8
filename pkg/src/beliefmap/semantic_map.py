"""Object-level map: MapPoints, MapObjects, geometry statistics and export."""
from __future__ import annotations

import itertools
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import ClassMismatch, EmptyPointSet, IoFailure, ParseError, UnknownObject
from .persistence import PersistenceBelief, PersistenceConfig, apply_gating, is_active
from .tracker import TrackerConfig, TrackState, track_init
from .types import BACKGROUND, BoundingBox

log = logging.getLogger(__name__)

EXTENT_FRACTION = 0.05
MAP_FORMAT_HEADER = "# beliefmap semantic map v1"


@dataclass(slots=True)
class MapPoint:
    id: int
    position: np.ndarray
    class_id: int = BACKGROUND
    object_id: Optional[int] = None
    active: bool = True
    first_keyframe: int = 0


@dataclass(eq=False)
class MapObject:
    id: int
    class_id: int
    first_box: BoundingBox
    current_box: BoundingBox
    mappoint_ids: set[int]
    centroid: np.ndarray
    extent: np.ndarray
    belief: PersistenceBelief
    track: TrackState
    last_seen_keyframe: int


def compute_centroid(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyPointSet("centroid of an empty point set")
    return pts.mean(axis=0)


def compute_extent(points, fraction: float = EXTENT_FRACTION) -> np.ndarray:
    """Per-axis object size from the medians of the top and bottom `fraction` tails.

    Below 20 points the tails degenerate and the raw min/max span is used.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        raise EmptyPointSet("extent of an empty point set")
    if n < 20:
        return pts.max(axis=0) - pts.min(axis=0)
    k = max(1, int(fraction * n + 1e-9))
    s = np.sort(pts, axis=0)
    lo = np.median(s[:k], axis=0)
    hi = np.median(s[-k:], axis=0)
    return np.maximum(hi - lo, 0.0)


class IdAllocator:
    """Monotone id source; ids are never reused."""

    def __init__(self, start: int = 0):
        self._counter = itertools.count(start)

    def __call__(self) -> int:
        return next(self._counter)


class SemanticMap:
    """MapPoint store plus the set of MapObjects currently in the map.

    Candidate objects (created by short-term association, not yet inserted)
    own points in the store but are not listed in `objects`.
    """

    def __init__(self, object_ids: Optional[IdAllocator] = None, persistence: Optional[PersistenceConfig] = None):
        self.points: dict[int, MapPoint] = {}
        self.objects: dict[int, MapObject] = {}
        self.aliases: dict[int, int] = {}  # retired candidate id -> map object id
        self._by_class: dict[int, dict[int, MapObject]] = {}
        self.object_ids = object_ids or IdAllocator()
        self._point_ids = IdAllocator()
        self.persistence = persistence or PersistenceConfig()

    # points

    def add_points(
        self,
        positions: np.ndarray,
        keyframe_id: int,
        class_id: int = BACKGROUND,
        object_id: Optional[int] = None,
        active: bool = True,
    ) -> list[MapPoint]:
        created = []
        for pos in np.asarray(positions, dtype=float).reshape(-1, 3):
            p = MapPoint(self._point_ids(), pos, class_id, object_id, active, keyframe_id)
            self.points[p.id] = p
            created.append(p)
        return created

    def positions(self, ids: Iterable[int]) -> np.ndarray:
        return np.array([self.points[i].position for i in ids], dtype=float).reshape(-1, 3)

    # objects

    def create_map_object(
        self,
        class_id: int,
        box: BoundingBox,
        mappoints: Sequence[MapPoint],
        keyframe_id: int,
        object_id: Optional[int] = None,
        track: Optional[TrackState] = None,
        timestamp: float = 0.0,
        tracker_cfg: Optional[TrackerConfig] = None,
    ) -> MapObject:
        """Build a candidate MapObject (not inserted) owning `mappoints`."""
        if not mappoints:
            raise EmptyPointSet("a MapObject needs at least one MapPoint")
        if any(p.class_id != class_id for p in mappoints):
            raise ClassMismatch(f"all MapPoints must have class {class_id}")
        oid = self.object_ids() if object_id is None else object_id
        pts = np.array([p.position for p in mappoints])
        centroid = compute_centroid(pts)
        for p in mappoints:
            self.points.setdefault(p.id, p)
            p.object_id = oid
            p.active = False
        if track is None:
            track = track_init(centroid, timestamp, tracker_cfg or TrackerConfig())
        return MapObject(
            id=oid,
            class_id=class_id,
            first_box=box,
            current_box=box,
            mappoint_ids={p.id for p in mappoints},
            centroid=centroid,
            extent=compute_extent(pts),
            belief=PersistenceBelief(0.5, keyframe_id),
            track=track,
            last_seen_keyframe=keyframe_id,
        )

    def insert(self, obj: MapObject) -> None:
        self.objects[obj.id] = obj
        self._by_class.setdefault(obj.class_id, {})[obj.id] = obj

    def remove(self, object_id: int) -> MapObject:
        obj = self.objects.pop(object_id, None)
        if obj is None:
            raise UnknownObject(object_id)
        del self._by_class[obj.class_id][object_id]
        for pid in obj.mappoint_ids:
            self.points.pop(pid, None)
        return obj

    def discard_candidate(self, obj: MapObject) -> None:
        for pid in obj.mappoint_ids:
            self.points.pop(pid, None)

    def resolve(self, object_id: int) -> int:
        return self.aliases.get(object_id, object_id)

    def objects_of_class(self, class_id: int) -> list[MapObject]:
        return [self._by_class[class_id][k] for k in sorted(self._by_class.get(class_id, {}))]

    def _recompute_geometry(self, obj: MapObject) -> None:
        pts = self.positions(sorted(obj.mappoint_ids))
        obj.centroid = compute_centroid(pts)
        obj.extent = compute_extent(pts)

    def merge(self, candidate: MapObject, target: MapObject) -> None:
        """Move the candidate's points into `target`; the candidate is retired."""
        active = is_active(target.belief.bel, self.persistence)
        for pid in candidate.mappoint_ids:
            p = self.points[pid]
            p.object_id = target.id
            p.active = active
        target.mappoint_ids |= candidate.mappoint_ids
        target.current_box = candidate.current_box
        candidate.mappoint_ids = set()
        self.aliases[candidate.id] = target.id
        self._recompute_geometry(target)

    def refresh_object(
        self, object_id: int, new_mappoints: Sequence[MapPoint], keyframe_id: int, track: Optional[TrackState] = None
    ) -> MapObject:
        """Add freshly observed points to an object and recompute its geometry.

        `track` is the latest filter state for the object, if the caller has one.
        """
        obj = self.objects.get(object_id)
        if obj is None:
            raise UnknownObject(object_id)
        bad = next((p for p in new_mappoints if p.class_id != obj.class_id), None)
        if bad is not None:
            raise ClassMismatch(f"point class {bad.class_id} != object class {obj.class_id}")
        active = is_active(obj.belief.bel, self.persistence)
        for p in new_mappoints:
            self.points.setdefault(p.id, p)
            p.object_id = obj.id
            p.active = active
            obj.mappoint_ids.add(p.id)
        if new_mappoints:
            self._recompute_geometry(obj)
        if track is not None:
            obj.track = track
        obj.last_seen_keyframe = keyframe_id
        return obj

    def gate(self, obj: MapObject):
        return apply_gating(obj, self.points, self.persistence)

    def check_integrity(self, candidates: Iterable[MapObject] = ()) -> None:
        owners = dict(self.objects)
        owners.update({c.id: c for c in candidates})
        for p in self.points.values():
            if (p.class_id >= 0) != (p.object_id is not None):
                raise AssertionError(f"point {p.id}: class/object mismatch")
            if p.class_id < 0:
                if not p.active:
                    raise AssertionError(f"background point {p.id} inactive")
                continue
            owner = owners.get(p.object_id)
            if owner is None or p.id not in owner.mappoint_ids:
                raise AssertionError(f"point {p.id} references missing object {p.object_id}")
        for obj in owners.values():
            for pid in obj.mappoint_ids:
                p = self.points.get(pid)
                if p is None or p.class_id != obj.class_id or p.object_id != obj.id:
                    raise AssertionError(f"object {obj.id} references bad point {pid}")


@dataclass(frozen=True)
class ObjectRecord:
    id: int
    class_id: int
    centroid: tuple[float, float, float]
    extent: tuple[float, float, float]
    belief: float


@dataclass(frozen=True)
class PointRecord:
    id: int
    class_id: int
    object_id: Optional[int]
    position: tuple[float, float, float]


@dataclass
class MapDocument:
    objects: list[ObjectRecord] = field(default_factory=list)
    points: list[PointRecord] = field(default_factory=list)
    config_hash: str = ""


def snapshot(smap: SemanticMap, config_hash: str = "") -> MapDocument:
    """Exportable view: objects at or above the belief threshold and active points."""
    objects = [
        ObjectRecord(o.id, o.class_id, tuple(map(float, o.centroid)), tuple(map(float, o.extent)), float(o.belief.bel))
        for _, o in sorted(smap.objects.items())
        if is_active(o.belief.bel, smap.persistence)
    ]
    points = [
        PointRecord(p.id, p.class_id, p.object_id, tuple(map(float, p.position)))
        for _, p in sorted(smap.points.items())
        if p.active and (p.object_id is None or p.object_id in smap.objects)
    ]
    return MapDocument(objects, points, config_hash)


def _f(x: float) -> str:
    return repr(float(x))


def format_map(doc: MapDocument) -> str:
    out = io.StringIO()
    out.write(MAP_FORMAT_HEADER + "\n")
    out.write(f"# config_hash {doc.config_hash or '-'}\n")
    out.write(f"# objects {len(doc.objects)}\n")
    out.write("# id class cx cy cz ex ey ez belief\n")
    for o in doc.objects:
        fields = [str(o.id), str(o.class_id), *map(_f, o.centroid), *map(_f, o.extent), _f(o.belief)]
        out.write("object " + " ".join(fields) + "\n")
    out.write(f"# points {len(doc.points)}\n")
    out.write("# id class object_id x y z\n")
    for p in doc.points:
        oid = "-" if p.object_id is None else str(p.object_id)
        out.write(f"point {p.id} {p.class_id} {oid} " + " ".join(map(_f, p.position)) + "\n")
    return out.getvalue()


def export_map(smap_or_doc: Union[SemanticMap, MapDocument], path=None, config_hash: str = "") -> str:
    """Serialize the map; writes to `path` when given and returns the text."""
    doc = smap_or_doc if isinstance(smap_or_doc, MapDocument) else snapshot(smap_or_doc, config_hash)
    text = format_map(doc)
    if path is not None:
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise IoFailure(f"cannot write map to {path}: {exc}") from exc
    return text


def parse_map(text: str, source: str = "<map>") -> MapDocument:
    doc = MapDocument()
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "#":
            if len(parts) == 3 and parts[1] == "config_hash":
                doc.config_hash = "" if parts[2] == "-" else parts[2]
            continue
        try:
            if parts[0] == "object" and len(parts) == 10:
                vals = list(map(float, parts[3:]))
                doc.objects.append(
                    ObjectRecord(int(parts[1]), int(parts[2]), tuple(vals[0:3]), tuple(vals[3:6]), vals[6])
                )
            elif parts[0] == "point" and len(parts) == 7:
                oid = None if parts[3] == "-" else int(parts[3])
                doc.points.append(PointRecord(int(parts[1]), int(parts[2]), oid, tuple(map(float, parts[4:7]))))
            else:
                raise ValueError(f"unrecognized record {parts[0]!r}")
        except ValueError as exc:
            raise ParseError(source, lineno, str(exc)) from exc
    return doc


def load_map(path) -> MapDocument:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read map {path}: {exc}") from exc
    return parse_map(text, str(path))
