"""End-to-end object/belief pipeline.

Frames flow one way through four stages: ingestion, tracking (keypoint
classification, short-term association, per-object filters), mapping
(keyframes, MapObjects, long-term association, persistence) and export (event
log, final map). The stages can run in one thread or as concurrent threads
joined by ordered queues; results are identical either way.
"""
from __future__ import annotations

import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import io as fio
from .association import associate_long_term, associate_short_term
from .config import PipelineConfig
from .errors import IoFailure
from .keypoints import analyze_boxes, classify_keypoints, label_keypoints
from .persistence import belief_update_miss, frustum_mask, is_active
from .semantic_map import IdAllocator, MapDocument, SemanticMap, export_map, snapshot
from .tracker import TrackState, classify_dynamic, track_init, track_predict, track_update
from .types import BoundingBox, CameraIntrinsics, Frame, KeypointArray, KeypointStatus, Pose, backproject_points, project, project_points

log = logging.getLogger(__name__)

MAP_FILE = "map.txt"
EVENTS_FILE = "events.log"
SUMMARY_FILE = "summary.txt"
TRAJECTORY_FILE = "trajectory.txt"
QUEUE_DEPTH = 32


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


@dataclass(frozen=True)
class Event:
    frame_id: int
    keyframe_id: int
    kind: str
    fields: tuple[tuple[str, object], ...] = ()

    def get(self, key: str, default=None):
        return dict(self.fields).get(key, default)

    def format(self) -> str:
        parts = [f"frame={self.frame_id}", f"kf={self.keyframe_id}", f"event={self.kind}"]
        parts += [f"{k}={_fmt(v)}" for k, v in self.fields]
        return " ".join(parts)


@dataclass(frozen=True)
class DetectionRecord:
    track_id: int
    class_id: int
    box: BoundingBox
    measured: bool
    speed: float  # nan until the track has a state
    dynamic: bool


@dataclass(frozen=True)
class FrameRecord:
    frame_id: int
    timestamp: float
    detections: tuple[DetectionRecord, ...]
    keypoints_kept: int
    keypoints_removed: int
    removed_by_class: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True, eq=False)
class TrackedFrame:
    frame: Frame
    keypoints: KeypointArray
    track_ids: tuple[int, ...]
    tracks: dict[int, TrackState]
    record: FrameRecord
    events: tuple[tuple[str, tuple], ...] = ()


@dataclass
class _Track:
    class_id: int
    state: Optional[TrackState] = None
    dynamic: bool = False


class FrameTracker:
    """Tracking stage: classification, short-term association and filtering."""

    def __init__(self, cfg: PipelineConfig, intr: CameraIntrinsics, ids: IdAllocator):
        self.cfg = cfg
        self.intr = intr
        self.ids = ids
        self.tracks: dict[int, _Track] = {}
        self._last: list[tuple[int, int, BoundingBox]] = []

    def _measure(self, frame: Frame, mask: np.ndarray) -> Optional[np.ndarray]:
        k = frame.keypoints
        mask = mask & np.isfinite(k.depth) & (k.depth > 0)
        if int(mask.sum()) < self.cfg.mapping.min_measurement_points:
            return None
        pts = backproject_points(k.u[mask], k.v[mask], k.depth[mask], self.intr, frame.camera_pose)
        return pts.mean(axis=0)

    def process(self, frame: Frame) -> TrackedFrame:
        cfg = self.cfg
        dets = frame.detections
        stats, verdicts = analyze_boxes(frame, cfg.classifier)
        st = associate_short_term(dets, self._last, cfg.assoc)
        track_ids = [-1] * len(dets)
        for d, tid in st.matches:
            track_ids[d] = tid
        for d in st.new_objects:
            track_ids[d] = self.ids()
        labels = label_keypoints(frame.keypoints, dets, stats, verdicts, cfg.classifier)

        tracks, events, records, dynamic = {}, [], [], []
        for d, det in enumerate(dets):
            tid = track_ids[d]
            entry = self.tracks.get(tid) or _Track(det.class_id)
            z = self._measure(frame, labels.box_index == d)
            s = entry.state
            if s is None:
                if z is not None:
                    s = track_init(z, frame.timestamp, cfg.ekf)
            else:
                dt = frame.timestamp - s.last_update
                if dt > 0:
                    s = track_predict(s, dt, cfg.ekf)
                if z is not None:
                    s, _ = track_update(s, z, cfg.ekf)
            is_dyn = s is not None and classify_dynamic(s, cfg.ekf)
            speed = float(np.linalg.norm(s.velocity)) if s is not None else float("nan")
            if is_dyn != entry.dynamic:
                events.append(("dynamic" if is_dyn else "static", (("track", tid), ("class", det.class_id), ("speed", speed))))
            tracks[tid] = _Track(det.class_id, s, is_dyn)
            dynamic.append(is_dyn)
            records.append(DetectionRecord(tid, det.class_id, det.box, z is not None, speed, is_dyn))

        # tracks not matched in this frame end here
        self.tracks = tracks
        self._last = [(track_ids[d], det.class_id, det.box) for d, det in enumerate(dets)]
        kept, removed = classify_keypoints(
            frame, verdicts, stats, cfg.classifier, object_ids=track_ids, dynamic=dynamic, labels=labels
        )
        by_class = ()
        if removed:
            owner = labels.box_index[(labels.box_index >= 0)]
            gone = {}
            for d, det in enumerate(dets):
                if det.class_id == 0 or dynamic[d]:
                    n = int((owner == d).sum())
                    if n:
                        gone[det.class_id] = gone.get(det.class_id, 0) + n
            by_class = tuple(sorted(gone.items()))
        record = FrameRecord(frame.id, frame.timestamp, tuple(records), len(kept), removed, by_class)
        snap = {tid: t.state for tid, t in tracks.items() if t.state is not None}
        return TrackedFrame(frame, kept, tuple(track_ids), snap, record, tuple(events))


@dataclass
class MapStats:
    keyframes: int = 0
    objects_created: int = 0
    merges: int = 0
    belief_updates: int = 0
    misses: int = 0
    deactivations: int = 0
    reactivations: int = 0
    dynamic_transitions: int = 0


class Mapper:
    """Mapping stage: keyframe MapPoints, MapObjects, long-term association and persistence."""

    def __init__(self, cfg: PipelineConfig, intr: CameraIntrinsics, ids: IdAllocator):
        self.cfg = cfg
        self.intr = intr
        self.smap = SemanticMap(ids, cfg.persistence)
        self.stats = MapStats()
        self.frame_index = 0
        self.keyframe_id = -1

    def _gating_event(self, ev: list, fid: int, kf: int, g) -> None:
        if g is None:
            return
        if g.active:
            self.stats.reactivations += 1
        else:
            self.stats.deactivations += 1
        ev.append(Event(fid, kf, "gate", (("object", g.object_id), ("active", g.active),
                                          ("points", len(g.point_ids)), ("belief", g.belief))))

    def process(self, tf: TrackedFrame) -> list[Event]:
        frame = tf.frame
        is_kf = self.frame_index % self.cfg.mapping.keyframe_every == 0
        self.frame_index += 1
        if is_kf:
            self.keyframe_id += 1
            self.stats.keyframes += 1
        kf = self.keyframe_id
        events = [Event(frame.id, kf, kind, fields) for kind, fields in tf.events]
        self.stats.dynamic_transitions += sum(1 for kind, _ in tf.events if kind == "dynamic")
        if is_kf:
            self._keyframe(tf, kf, events)
        return events

    def _keyframe(self, tf: TrackedFrame, kf: int, events: list) -> None:
        smap, cfg, frame = self.smap, self.cfg, tf.frame
        pose = frame.camera_pose
        k = tf.keypoints
        valid = np.isfinite(k.depth) & (k.depth > 0)
        world = backproject_points(k.u, k.v, np.where(valid, k.depth, 1.0), self.intr, pose)

        bg = valid & (k.status == int(KeypointStatus.STATIC))
        if bg.any():
            smap.add_points(world[bg], kf)

        movable = valid & (k.status == int(KeypointStatus.MOVABLE))
        seen: set[int] = set()
        candidates = []
        det_of = {tid: d for d, tid in enumerate(tf.track_ids)}
        for tid in np.unique(k.object_id[movable]).tolist():
            sel = movable & (k.object_id == tid)
            class_id = int(k.class_id[sel][0])
            box = frame.detections[det_of[tid]].box
            track = tf.tracks.get(tid)
            target = smap.resolve(tid)
            if target in smap.objects:
                pts = smap.add_points(world[sel], kf, class_id)
                obj = smap.refresh_object(target, pts, kf, track)
                obj.current_box = box
                seen.add(target)
                continue
            pts = smap.add_points(world[sel], kf, class_id)
            candidates.append(
                smap.create_map_object(class_id, box, pts, kf, object_id=tid, track=track,
                                       timestamp=frame.timestamp, tracker_cfg=cfg.ekf)
            )

        for act in associate_long_term(candidates, smap, kf, cfg.assoc):
            if not act.merged:
                obj = smap.objects[act.candidate_id]
                self.stats.objects_created += 1
                seen.add(obj.id)
                events.append(Event(frame.id, kf, "insert", (("object", obj.id), ("class", obj.class_id),
                                                             ("points", len(obj.mappoint_ids)), ("belief", obj.belief.bel))))
                continue
            self.stats.merges += 1
            seen.add(act.target_id)
            fields = [("candidate", act.candidate_id), ("object", act.target_id), ("distance", act.distance)]
            if act.belief_before != act.belief_after:
                self.stats.belief_updates += 1
            fields += [("belief_before", act.belief_before), ("belief", act.belief_after)]
            events.append(Event(frame.id, kf, "merge", tuple(fields)))
            self._gating_event(events, frame.id, kf, act.gating)

        self._misses(frame, kf, seen, events)

    def _in_view(self, centroid: np.ndarray, corners: np.ndarray, cam_pose: Pose) -> bool:
        """Centroid inside the margin-shrunk frustum, whole extent horizontally in view.

        Low objects routinely lose a bottom corner below the image edge while
        still being fully detectable, so corners are not tested vertically.
        """
        p = self.cfg.persistence
        if not frustum_mask(centroid[None], cam_pose, self.intr, p.max_range, p.frustum_margin)[0]:
            return False
        u, _, z = project_points(corners, self.intr, cam_pose)
        with np.errstate(invalid="ignore"):
            ok = (z > 0) & (z <= p.max_range) & (u >= p.frustum_margin) & (u < self.intr.width - p.frustum_margin)
        return bool(ok.all())

    @staticmethod
    def _occluded(frame: Frame, u: float, v: float, front_depth: float, margin: float = 0.1) -> bool:
        """Whether the view of a point is blocked or unknown at pixel (u, v).

        Without a depth image nothing can be said, so the view counts as
        clear. A missing reading means unknown and counts as blocked.
        """
        if frame.depth_lookup is None:
            return False
        d = float(np.asarray(frame.depth_lookup(np.array([int(u)]), np.array([int(v)]))).reshape(-1)[0])
        if not math.isfinite(d) or d <= 0:
            return True
        return d < front_depth - margin

    def _misses(self, frame: Frame, kf: int, seen: set, events: list) -> None:
        smap, p = self.smap, self.cfg.persistence
        signs = np.array([[sx, sy, sz] for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)])
        for oid in sorted(smap.objects):
            if oid in seen:
                continue
            obj = smap.objects[oid]
            if not self._in_view(obj.centroid, obj.centroid + signs * obj.extent, frame.camera_pose):
                continue
            cu, cv, cz = project(obj.centroid, self.intr, frame.camera_pose)
            if any(d.class_id == obj.class_id and d.box.contains(cu, cv) for d in frame.detections):
                continue
            if self._occluded(frame, cu, cv, cz - 0.5 * float(np.linalg.norm(obj.extent))):
                continue
            before = obj.belief.bel
            obj.belief = belief_update_miss(obj.belief, p, kf)
            self.stats.misses += 1
            events.append(Event(frame.id, kf, "miss", (("object", oid), ("class", obj.class_id),
                                                       ("belief_before", before), ("belief", obj.belief.bel))))
            self._gating_event(events, frame.id, kf, smap.gate(obj))


@dataclass
class RunResult:
    smap: SemanticMap
    document: MapDocument
    map_text: str
    events: list[Event]
    event_lines: list[str]
    records: list[FrameRecord]
    summary: dict
    config_hash: str
    timestamps: list[float] = field(default_factory=list)
    poses: list[Pose] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def events_text(self) -> str:
        return "".join(line + "\n" for line in self.event_lines)


def _summary(mapper: Mapper, records: Sequence[FrameRecord], doc: MapDocument) -> dict:
    s = mapper.stats
    smap = mapper.smap
    dyn_frames = sum(1 for r in records for d in r.detections if d.dynamic)
    dyn_tracks = len({d.track_id for r in records for d in r.detections if d.dynamic})
    return {
        "frames": len(records),
        "keyframes": s.keyframes,
        "objects_created": s.objects_created,
        "objects_merged": s.merges,
        "objects_removed": sum(
            1 for o in smap.objects.values() if not is_active(o.belief.bel, smap.persistence)
        ),
        "belief_updates": s.belief_updates,
        "misses": s.misses,
        "deactivations": s.deactivations,
        "reactivations": s.reactivations,
        "objects_in_map": len(smap.objects),
        "objects_exported": len(doc.objects),
        "points_exported": len(doc.points),
        "dynamic_tracks": dyn_tracks,
        "dynamic_classifications": dyn_frames,
        "keypoints_removed": sum(r.keypoints_removed for r in records),
    }


def _run_single(frames: Iterable[Frame], tracker: FrameTracker, mapper: Mapper, sink) -> None:
    for frame in frames:
        tf = tracker.process(frame)
        sink(tf, mapper.process(tf))


def _run_staged(frames: Iterable[Frame], tracker: FrameTracker, mapper: Mapper, sink) -> None:
    # Every stage consumes its input until the end marker, even after a
    # failure, so no producer can block forever on a full queue.
    q_in: queue.Queue = queue.Queue(QUEUE_DEPTH)
    q_tracked: queue.Queue = queue.Queue(QUEUE_DEPTH)
    q_out: queue.Queue = queue.Queue(QUEUE_DEPTH)
    done = object()
    errors: list[BaseException] = []
    failed = threading.Event()

    def fail(exc: BaseException) -> None:
        errors.append(exc)
        failed.set()

    def ingest():
        try:
            for frame in frames:
                if failed.is_set():
                    break
                q_in.put(frame)
        except BaseException as exc:
            fail(exc)
        finally:
            q_in.put(done)

    def stage(fn, src, dst):
        while True:
            item = src.get()
            if item is done:
                break
            if failed.is_set():
                continue
            try:
                dst.put(fn(item))
            except BaseException as exc:
                fail(exc)
        dst.put(done)

    threads = [
        threading.Thread(target=ingest, name="ingest", daemon=True),
        threading.Thread(target=stage, args=(tracker.process, q_in, q_tracked), name="tracking", daemon=True),
        threading.Thread(
            target=stage, args=(lambda tf: (tf, mapper.process(tf)), q_tracked, q_out), name="mapping", daemon=True
        ),
    ]
    for t in threads:
        t.start()
    # the export stage runs on the calling thread
    while True:
        item = q_out.get()
        if item is done:
            break
        if failed.is_set():
            continue
        try:
            sink(*item)
        except BaseException as exc:
            fail(exc)
    for t in threads:
        t.join()
    if errors:
        raise errors[0]


def process_frames(
    frames: Iterable[Frame],
    cfg: PipelineConfig,
    intr: CameraIntrinsics,
    single_thread: bool = True,
    events_path=None,
) -> RunResult:
    """Run the pipeline over frames in order; optionally stream the event log to a file."""
    ids = IdAllocator()
    tracker = FrameTracker(cfg, intr, ids)
    mapper = Mapper(cfg, intr, ids)
    chash = cfg.config_hash
    header = f"# beliefmap events config_hash={chash}"
    events: list[Event] = []
    lines: list[str] = [header]
    records: list[FrameRecord] = []
    stamps: list[float] = []
    poses: list[Pose] = []
    fh = None
    if events_path is not None:
        try:
            fh = open(events_path, "w")
        except OSError as exc:
            raise IoFailure(f"cannot write {events_path}: {exc}") from exc
        fh.write(header + "\n")

    def sink(tf: TrackedFrame, evs: list[Event]) -> None:
        records.append(tf.record)
        stamps.append(tf.frame.timestamp)
        poses.append(tf.frame.camera_pose)
        for e in evs:
            events.append(e)
            line = e.format()
            lines.append(line)
            if fh is not None:
                fh.write(line + "\n")

    t0 = time.perf_counter()
    try:
        (_run_single if single_thread else _run_staged)(frames, tracker, mapper, sink)
    finally:
        if fh is not None:
            fh.close()
    elapsed = time.perf_counter() - t0
    doc = snapshot(mapper.smap, chash)
    text = export_map(doc)
    summary = _summary(mapper, records, doc)
    log.info(
        "event=run_done frames=%d keyframes=%d objects=%d elapsed_s=%.3f mode=%s",
        len(records), mapper.stats.keyframes, len(doc.objects), elapsed,
        "single" if single_thread else "staged",
    )
    return RunResult(mapper.smap, doc, text, events, lines, records, summary, chash, stamps, poses, elapsed)


def write_outputs(result: RunResult, out_dir, map_path=None) -> None:
    out = Path(out_dir)
    export_map(result.document, map_path or out / MAP_FILE)
    body = "".join(f"{k}={v}\n" for k, v in result.summary.items())
    fio._write_text(out / SUMMARY_FILE, f"config_hash={result.config_hash}\n" + body)
    fio.write_trajectory(out / TRAJECTORY_FILE, result.timestamps, result.poses)


def run_pipeline(
    cfg: PipelineConfig,
    frames_dir=None,
    out_dir=None,
    single_thread: bool = True,
    map_path=None,
) -> RunResult:
    """Load a frames directory, run, and write map, event log, summary and trajectory."""
    frames_dir = frames_dir or cfg.frames_dir
    out_dir = out_dir or cfg.out_dir
    if frames_dir is None:
        raise IoFailure("no frames directory given")
    frames, intr = fio.load_frames(frames_dir, cfg.camera, cfg.poses_file)
    events_path = None
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create {out_dir}: {exc}") from exc
        events_path = Path(out_dir) / EVENTS_FILE
    result = process_frames(frames, cfg, intr, single_thread, events_path)
    if out_dir is not None:
        write_outputs(result, out_dir, map_path)
    return result
