"""Recursive Bayes filter over object persistence and belief-gated MapPoints."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .types import CameraIntrinsics, Pose, project_points

BELIEF_FLOOR = 0.01
BELIEF_CEILING = 0.99
LIKELIHOOD_MIN = 0.05
LIKELIHOOD_MAX = 0.95


@dataclass(frozen=True)
class PersistenceConfig:
    belief_threshold: float = 0.6
    likelihood_scale: float = 0.5  # m
    miss_likelihood_present: float = 0.3
    miss_likelihood_absent: float = 0.7
    max_range: float = 5.0  # m
    frustum_margin: float = 20.0  # px

    def __post_init__(self):
        if not 0 < self.belief_threshold < 1:
            raise ValueError("belief_threshold must lie in (0, 1)")
        if not self.likelihood_scale > 0:
            raise ValueError("likelihood_scale must be positive")
        for p in (self.miss_likelihood_present, self.miss_likelihood_absent):
            if not 0 < p < 1:
                raise ValueError("miss likelihoods must lie in (0, 1)")
        if not self.miss_likelihood_absent > self.miss_likelihood_present:
            raise ValueError("a miss must be evidence of absence (absent > present)")
        if not self.max_range > 0 or self.frustum_margin < 0:
            raise ValueError("max_range must be positive and frustum_margin non-negative")


@dataclass(frozen=True)
class PersistenceBelief:
    bel: float = 0.5
    last_update_keyframe: int = 0


def bayes_update(bel: float, l_present: float, l_absent: float) -> float:
    """One binary Bayes step, clamped to [0.01, 0.99]."""
    num = l_present * bel
    post = num / (num + l_absent * (1.0 - bel))
    return min(max(post, BELIEF_FLOOR), BELIEF_CEILING)


def detection_likelihoods(centroid_dist: float, cfg: PersistenceConfig) -> tuple[float, float]:
    l1 = math.exp(-centroid_dist / cfg.likelihood_scale)
    l1 = min(max(l1, LIKELIHOOD_MIN), LIKELIHOOD_MAX)
    l0 = min(max(1.0 - l1, LIKELIHOOD_MIN), LIKELIHOOD_MAX)
    return l1, l0


def belief_update_detection(
    b: PersistenceBelief, centroid_dist: float, cfg: PersistenceConfig, keyframe_id: Optional[int] = None
) -> PersistenceBelief:
    if centroid_dist < 0:
        raise ValueError("centroid distance must be non-negative")
    l1, l0 = detection_likelihoods(centroid_dist, cfg)
    kf = b.last_update_keyframe if keyframe_id is None else keyframe_id
    return PersistenceBelief(bayes_update(b.bel, l1, l0), kf)


def belief_update_miss(
    b: PersistenceBelief, cfg: PersistenceConfig, keyframe_id: Optional[int] = None
) -> PersistenceBelief:
    kf = b.last_update_keyframe if keyframe_id is None else keyframe_id
    return PersistenceBelief(
        bayes_update(b.bel, cfg.miss_likelihood_present, cfg.miss_likelihood_absent), kf
    )


def is_active(bel: float, cfg: PersistenceConfig) -> bool:
    return bel >= cfg.belief_threshold


@dataclass(frozen=True)
class GatingChange:
    object_id: int
    active: bool
    point_ids: tuple[int, ...]
    belief: float


def apply_gating(obj, points: Mapping[int, object], cfg: PersistenceConfig) -> Optional[GatingChange]:
    """Set every MapPoint of `obj` active iff its belief clears the threshold.

    Returns the transition (points whose flag flipped) or None when nothing changed.
    """
    active = is_active(obj.belief.bel, cfg)
    flipped = []
    for pid in sorted(obj.mappoint_ids):
        p = points[pid]
        if p.active != active:
            p.active = active
            flipped.append(pid)
    if not flipped:
        return None
    return GatingChange(obj.id, active, tuple(flipped), obj.belief.bel)


def frustum_check(
    centroid,
    cam_pose: Pose,
    intr: CameraIntrinsics,
    max_range: float,
    margin: float = 0.0,
) -> bool:
    """True iff the point projects inside the image (shrunk by `margin` px)
    with positive camera depth no larger than max_range."""
    return bool(frustum_mask(np.atleast_2d(centroid), cam_pose, intr, max_range, margin).all())


def frustum_mask(points, cam_pose: Pose, intr: CameraIntrinsics, max_range: float, margin: float = 0.0):
    u, v, z = project_points(np.asarray(points, dtype=float), intr, cam_pose)
    with np.errstate(invalid="ignore"):
        return (
            (z > 0)
            & (z <= max_range)
            & (u >= margin)
            & (u < intr.width - margin)
            & (v >= margin)
            & (v < intr.height - margin)
        )
