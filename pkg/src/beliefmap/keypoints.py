"""Per-frame keypoint classification with feature repopulation.

People are filtered a priori, movable objects label their keypoints, and the
depth statistics of each bounding box rescue background keypoints that happen to
fall inside a detection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InsufficientDepth
from .types import (
    BACKGROUND,
    PERSON,
    BoundingBox,
    Detection,
    DepthLookup,
    Frame,
    KeypointArray,
    KeypointStatus,
    iou,
)


def _default_thresholds() -> dict[int, float]:
    return {PERSON: 0.6, 56: 0.5}


@dataclass(frozen=True)
class ClassifierConfig:
    depth_threshold_by_class: Mapping[int, float] = field(default_factory=_default_thresholds)
    default_depth_threshold: float = 0.4
    stddev_occlusion_factor: float = 1.5
    occlusion_iou_threshold: float = 0.2
    stride: int = 4
    robust_min: bool = False
    min_valid_samples: int = 10

    def __post_init__(self):
        values = list(self.depth_threshold_by_class.values())
        values += [self.default_depth_threshold, self.stddev_occlusion_factor]
        if any(not (v > 0) for v in values):
            raise ValueError("depth thresholds and the stddev factor must be positive")
        if not 0 < self.occlusion_iou_threshold <= 1:
            raise ValueError("occlusion_iou_threshold must lie in (0, 1]")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def depth_threshold(self, class_id: int) -> float:
        return self.depth_threshold_by_class.get(class_id, self.default_depth_threshold)


@dataclass(frozen=True)
class BoxDepthStats:
    median: float
    mean: float
    min: float
    max: float
    stddev: float
    center_depth: float  # nan when the center pixel has no usable depth
    n_samples: int = 0


@dataclass(frozen=True)
class OcclusionVerdict:
    occluded_by_labeled: bool = False
    occluding_box_indices: tuple[int, ...] = ()
    occluded_by_unlabeled: bool = False


def _grid(lo: float, hi: float, stride: int) -> np.ndarray:
    start = math.ceil(lo / stride) * stride
    return np.arange(start, hi, stride, dtype=np.int64)


def compute_box_depth_stats(
    box: BoundingBox,
    depth_lookup: DepthLookup,
    stride: int = 4,
    exclude: Sequence[BoundingBox] = (),
    robust_min: bool = False,
    min_samples: int = 10,
) -> BoxDepthStats:
    """Depth statistics over valid pixels on the stride grid inside `box`.

    Pixels inside any `exclude` rectangle are ignored. With `robust_min` the
    minimum is replaced by the 2nd percentile.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    us = _grid(box.x, box.x2, stride)
    vs = _grid(box.y, box.y2, stride)
    if len(us) == 0 or len(vs) == 0:
        raise InsufficientDepth("box contains no sample points")
    uu, vv = np.meshgrid(us, vs)
    d = np.asarray(depth_lookup(uu, vv), dtype=float)
    keep = np.isfinite(d) & (d > 0)
    for r in exclude:
        keep &= ~r.contains(uu, vv)
    d = d[keep]
    if d.size < min_samples:
        raise InsufficientDepth(f"{d.size} valid depth samples, need {min_samples}")

    cu, cv = box.center
    center = float(np.asarray(depth_lookup(np.array([int(cu)]), np.array([int(cv)])))[0])
    if not (math.isfinite(center) and center > 0) or any(r.contains(int(cu), int(cv)) for r in exclude):
        center = math.nan
    low = float(np.percentile(d, 2.0)) if robust_min else float(d.min())
    return BoxDepthStats(
        median=float(np.median(d)),
        mean=float(d.mean()),
        min=low,
        max=float(d.max()),
        stddev=float(d.std()),
        center_depth=center,
        n_samples=int(d.size),
    )


def _unlabeled_occlusion(s: BoxDepthStats, threshold: float, cfg: ClassifierConfig) -> bool:
    # The center test carries a one-threshold margin: the front face of an
    # unoccluded object sits at or slightly below the box median.
    if s.stddev > cfg.stddev_occlusion_factor * threshold:
        return True
    return math.isfinite(s.center_depth) and s.median > s.center_depth + threshold


def detect_occlusions(
    detections: Sequence[Detection],
    stats: Sequence[Optional[BoxDepthStats]],
    cfg: ClassifierConfig,
) -> list[OcclusionVerdict]:
    """Occlusion verdict per detection; boxes whose stats are None get an empty verdict."""
    verdicts = []
    for i, det in enumerate(detections):
        si = stats[i]
        if si is None:
            verdicts.append(OcclusionVerdict())
            continue
        occluders = tuple(
            j
            for j, other in enumerate(detections)
            if j != i
            and stats[j] is not None
            and iou(det.box, other.box) > cfg.occlusion_iou_threshold
            and stats[j].median < si.median
        )
        verdicts.append(
            OcclusionVerdict(
                occluded_by_labeled=bool(occluders),
                occluding_box_indices=occluders,
                occluded_by_unlabeled=_unlabeled_occlusion(si, cfg.depth_threshold(det.class_id), cfg),
            )
        )
    return verdicts


def overlap_regions(detections: Sequence[Detection], i: int, verdict: OcclusionVerdict) -> list[BoundingBox]:
    out = []
    for j in verdict.occluding_box_indices:
        r = detections[i].box.intersection(detections[j].box)
        if r is not None:
            out.append(r)
    return out


def analyze_boxes(
    frame: Frame, cfg: ClassifierConfig
) -> tuple[list[Optional[BoxDepthStats]], list[OcclusionVerdict]]:
    """Depth statistics and occlusion verdicts for every detection in a frame.

    Boxes behind a labeled occluder get their statistics recomputed without the
    overlap rectangle, and the unlabeled-occlusion test is re-run on those.
    A None entry marks a box skipped for insufficient depth.
    """
    dets = frame.detections
    if frame.depth_lookup is None:
        return [None] * len(dets), [OcclusionVerdict() for _ in dets]

    def stats_for(box, exclude=()):
        try:
            return compute_box_depth_stats(
                box, frame.depth_lookup, cfg.stride, exclude, cfg.robust_min, cfg.min_valid_samples
            )
        except InsufficientDepth:
            return None

    stats = [stats_for(d.box) for d in dets]
    verdicts = detect_occlusions(dets, stats, cfg)
    for i, v in enumerate(verdicts):
        if not v.occluded_by_labeled:
            continue
        refined = stats_for(dets[i].box, overlap_regions(dets, i, v))
        stats[i] = refined
        if refined is None:
            verdicts[i] = OcclusionVerdict(True, v.occluding_box_indices, False)
        else:
            verdicts[i] = OcclusionVerdict(
                True,
                v.occluding_box_indices,
                _unlabeled_occlusion(refined, cfg.depth_threshold(dets[i].class_id), cfg),
            )
    return stats, verdicts


@dataclass(frozen=True, eq=False)
class KeypointLabels:
    """Raw per-keypoint outcome of the depth test.

    box_index is the detection a keypoint was attributed to (-1 for background);
    discarded marks keypoints inside a box whose depth could not be trusted.
    """

    box_index: np.ndarray
    discarded: np.ndarray


def _box_order(stats: Sequence[Optional[BoxDepthStats]]) -> list[int]:
    # Untrusted boxes first so their contents are always discarded, then front to back.
    unusable = [i for i, s in enumerate(stats) if s is None]
    usable = sorted((i for i, s in enumerate(stats) if s is not None), key=lambda i: (stats[i].median, i))
    return unusable + usable


def label_keypoints(
    keypoints: KeypointArray,
    detections: Sequence[Detection],
    stats: Sequence[Optional[BoxDepthStats]],
    verdicts: Sequence[OcclusionVerdict],
    cfg: ClassifierConfig,
) -> KeypointLabels:
    """Attribute keypoints to detections by the per-box depth test.

    A keypoint passing the test of several boxes goes to the smallest of them
    (ties: closest median depth), so an object resting on a larger one keeps
    its points whether or not the larger box is detected. Keypoints without
    depth go to the front-most box containing them.
    """
    n = len(keypoints)
    best = np.full(n, -1, dtype=np.int64)
    best_err = np.full(n, np.inf)
    best_area = np.full(n, np.inf)
    discarded = np.zeros(n, dtype=bool)
    u, v, depth = keypoints.u, keypoints.v, keypoints.depth
    valid = np.isfinite(depth) & (depth > 0)
    for i in _box_order(stats):
        det = detections[i]
        inside = det.box.contains(u, v)
        if not inside.any():
            continue
        s, verdict = stats[i], verdicts[i]
        if s is None or verdict.occluded_by_unlabeled:
            discarded |= inside
            continue
        for r in overlap_regions(detections, i, verdict):
            inside &= ~r.contains(u, v)
        area = det.box.w * det.box.h
        err = np.abs(depth - s.median)
        passes = inside & valid & (depth <= s.min + cfg.depth_threshold(det.class_id))
        better = passes & ((area < best_area) | ((area == best_area) & (err < best_err)))
        best[better] = i
        best_area[better] = area
        best_err[better] = err[better]
        no_depth = inside & ~valid & (best < 0)
        best[no_depth] = i
    best[discarded] = -1
    return KeypointLabels(best, discarded)


def classify_keypoints(
    frame: Frame,
    verdicts: Sequence[OcclusionVerdict],
    stats: Sequence[Optional[BoxDepthStats]],
    cfg: ClassifierConfig,
    object_ids: Optional[Sequence[int]] = None,
    dynamic: Optional[Sequence[bool]] = None,
    labels: Optional[KeypointLabels] = None,
) -> tuple[KeypointArray, int]:
    """Classify a frame's keypoints and drop the dynamic ones.

    object_ids maps detection index to owning object (defaults to the index);
    dynamic flags detections whose object is currently classified as moving,
    whose keypoints are then filtered like a person's.
    Returns the surviving keypoints and the number removed.
    """
    kps = frame.keypoints
    dets = frame.detections
    if len(dets) == 0:
        out = KeypointArray(kps.u, kps.v, kps.depth)
        return out, 0
    if labels is None:
        labels = label_keypoints(kps, dets, stats, verdicts, cfg)
    if object_ids is None:
        object_ids = range(len(dets))
    det_class = np.array([d.class_id for d in dets], dtype=np.int64)
    det_object = np.array(list(object_ids), dtype=np.int64)
    det_dynamic = det_class == PERSON
    if dynamic is not None:
        det_dynamic |= np.asarray(dynamic, dtype=bool)

    n = len(kps)
    owned = labels.box_index >= 0
    idx = np.where(owned, labels.box_index, 0)
    class_id = np.where(owned, det_class[idx], BACKGROUND)
    object_id = np.where(owned, det_object[idx], -1)
    is_dynamic = owned & det_dynamic[idx]
    status = np.full(n, int(KeypointStatus.STATIC), dtype=np.int8)
    status[owned] = int(KeypointStatus.MOVABLE)
    status[is_dynamic] = int(KeypointStatus.DYNAMIC)

    keep = ~(labels.discarded | is_dynamic)
    out = KeypointArray(kps.u, kps.v, kps.depth, class_id, object_id, status).select(keep)
    return out, n - len(out)


def naive_filter(frame: Frame, filtered_boxes: Optional[Sequence[bool]] = None) -> KeypointArray:
    """Baseline without repopulation: drop every keypoint inside a filtered box.

    By default the person boxes are filtered.
    """
    kps = frame.keypoints
    keep = np.ones(len(kps), dtype=bool)
    for i, det in enumerate(frame.detections):
        hit = det.class_id == PERSON if filtered_boxes is None else filtered_boxes[i]
        if hit:
            keep &= ~det.box.contains(kps.u, kps.v)
    return KeypointArray(kps.u, kps.v, kps.depth).select(keep)
