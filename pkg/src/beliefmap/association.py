"""Short-term (frame-to-frame IoU) and long-term (map centroid) data association."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyObject
from .persistence import GatingChange, belief_update_detection
from .semantic_map import MapObject, SemanticMap
from .types import BoundingBox, Detection, iou


@dataclass(frozen=True)
class AssociationConfig:
    iou_threshold: float = 0.3
    ltda_threshold: float = 0.5  # m
    keyframe_window_n: int = 5

    def __post_init__(self):
        if not 0 < self.iou_threshold < 1:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if not self.ltda_threshold > 0 or self.keyframe_window_n < 1:
            raise ValueError("ltda_threshold must be positive and keyframe_window_n >= 1")


@dataclass(frozen=True)
class ShortTermResult:
    matches: tuple[tuple[int, int], ...]  # (detection index, object id)
    new_objects: tuple[int, ...]


def associate_short_term(
    detections: Sequence[Detection],
    last_frame_objects: Sequence[tuple[int, int, BoundingBox]],
    cfg: AssociationConfig,
) -> ShortTermResult:
    """Greedy first-claim IoU matching in detection order, then last-object order."""
    matches, new = [], []
    claimed = set()
    for d, det in enumerate(detections):
        for object_id, class_id, box in last_frame_objects:
            if object_id in claimed or class_id != det.class_id:
                continue
            if iou(det.box, box) > cfg.iou_threshold:
                matches.append((d, object_id))
                claimed.add(object_id)
                break
        else:
            new.append(d)
    return ShortTermResult(tuple(matches), tuple(new))


@dataclass(frozen=True)
class MergeAction:
    candidate_id: int
    target_id: Optional[int]  # None: inserted as a new map object
    distance: float = math.nan
    belief_before: Optional[float] = None
    belief_after: Optional[float] = None
    gating: Optional[GatingChange] = None

    @property
    def merged(self) -> bool:
        return self.target_id is not None


def associate_long_term(
    candidates: Sequence[MapObject],
    smap: SemanticMap,
    current_keyframe_id: int,
    cfg: AssociationConfig,
) -> list[MergeAction]:
    """Merge each candidate into the nearest same-class map object within
    ltda_threshold, or insert it as a new map object.

    A merge into an object unseen for more than keyframe_window_n keyframes
    updates its persistence belief (config taken from the map) and re-gates
    its MapPoints. Candidates already inserted or merged are skipped.
    """
    actions = []
    for cand in candidates:
        if cand.id in smap.aliases or cand.id in smap.objects:
            continue
        if not cand.mappoint_ids:
            raise EmptyObject(f"candidate {cand.id} has no MapPoints")
        target, best = None, math.inf
        for obj in smap.objects_of_class(cand.class_id):
            dist = float(np.linalg.norm(cand.centroid - obj.centroid))
            if dist < cfg.ltda_threshold and dist < best:
                target, best = obj, dist
        if target is None:
            smap.insert(cand)
            actions.append(MergeAction(cand.id, None))
            continue

        before = target.belief.bel
        unseen = current_keyframe_id - target.last_seen_keyframe > cfg.keyframe_window_n
        smap.merge(cand, target)
        gating = None
        if unseen:
            target.belief = belief_update_detection(target.belief, best, smap.persistence, current_keyframe_id)
            gating = smap.gate(target)
        target.last_seen_keyframe = current_keyframe_id
        actions.append(MergeAction(cand.id, target.id, best, before, target.belief.bel, gating))
    return actions
