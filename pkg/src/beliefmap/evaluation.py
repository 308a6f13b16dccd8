"""Absolute trajectory error and semantic-map scoring."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NoMatches
from .types import Pose

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Trajectory:
    timestamps: np.ndarray
    poses: tuple[Pose, ...]

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(ts) != len(self.poses):
            raise ValueError("one pose per timestamp")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def transformed(self, T: Pose) -> Trajectory:
        return Trajectory(self.timestamps, [T @ p for p in self.poses])


@dataclass(frozen=True, eq=False)
class Alignment:
    """Similarity transform p -> scale * R p + t mapping estimate points onto ground truth."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0
    degenerate: bool = False

    @property
    def pose(self) -> Pose:
        return Pose.from_matrix(self.rotation, self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation


@dataclass
class AteReport:
    rmse: float
    mean: float
    median: float
    max: float
    matched_pairs: int
    alignment: Pose
    scale: float = 1.0
    degenerate: bool = False
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mean": self.mean,
            "median": self.median,
            "max": self.max,
            "matched_pairs": self.matched_pairs,
            "scale": self.scale,
            "degenerate": self.degenerate,
            "alignment": {
                "translation": [float(x) for x in self.alignment.translation],
                "quaternion_xyzw": [float(x) for x in self.alignment.quaternion],
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        return (
            f"compared_pose_pairs {self.matched_pairs} pairs\n"
            f"absolute_translational_error.rmse {self.rmse:.6f} m\n"
            f"absolute_translational_error.mean {self.mean:.6f} m\n"
            f"absolute_translational_error.median {self.median:.6f} m\n"
            f"absolute_translational_error.max {self.max:.6f} m\n"
        )


def associate_timestamps(est: Trajectory, gt: Trajectory, max_dt: float = 0.02) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp matching; each pose is used at most once.

    Candidate pairs are taken in order of increasing time difference
    (ties by index); the result is sorted by estimate index.
    """
    if len(est) == 0 or len(gt) == 0:
        raise NoMatches("empty trajectory")
    te, tg = est.timestamps, gt.timestamps
    pairs = []
    for i, t in enumerate(te):
        lo = np.searchsorted(tg, t - max_dt, side="left")
        hi = np.searchsorted(tg, t + max_dt, side="right")
        for j in range(lo, hi):
            dt = abs(tg[j] - t)
            if dt <= max_dt:
                pairs.append((dt, i, j))
    pairs.sort()
    used_e, used_g, out = set(), set(), []
    for _, i, j in pairs:
        if i in used_e or j in used_g:
            continue
        used_e.add(i)
        used_g.add(j)
        out.append((i, j))
    if not out:
        raise NoMatches(f"no timestamp pairs within {max_dt} s")
    return sorted(out)


def _cost(a: Alignment, e: np.ndarray, g: np.ndarray) -> float:
    return float(((a.apply(e) - g) ** 2).sum())


def align(est_points, gt_points, with_scale: bool = False) -> Alignment:
    """Closed-form least-squares rigid (or similarity) alignment mapping est onto gt.

    Cross-covariance SVD with reflection correction. The identity transform is
    kept whenever it fits at least as well, so already aligned inputs give
    exactly zero residuals. Collinear or coincident inputs fall back to a
    translation-only alignment (flagged degenerate).
    """
    e = np.asarray(est_points, dtype=float).reshape(-1, 3)
    g = np.asarray(gt_points, dtype=float).reshape(-1, 3)
    if len(e) != len(g) or len(e) == 0:
        raise ValueError("need equally many, non-zero point pairs")
    identity = Alignment(np.eye(3), np.zeros(3))
    mu_e, mu_g = e.mean(axis=0), g.mean(axis=0)
    ec, gc = e - mu_e, g - mu_g

    sv = np.linalg.svd(ec, compute_uv=False) if len(e) >= 3 else np.zeros(1)
    if len(e) < 3 or sv[0] < 1e-12 or sv[1] < 1e-9 * sv[0]:
        log.warning("degenerate geometry for alignment; using translation only")
        best = Alignment(np.eye(3), mu_g - mu_e, 1.0, True)
    else:
        U, S, Vt = np.linalg.svd(gc.T @ ec)
        D = np.eye(3)
        if np.linalg.det(U) * np.linalg.det(Vt) < 0:
            D[2, 2] = -1.0
        R = U @ D @ Vt
        scale = float(np.trace(np.diag(S) @ D) / (ec**2).sum()) if with_scale else 1.0
        best = Alignment(R, mu_g - scale * R @ mu_e, scale, False)
    if _cost(identity, e, g) <= _cost(best, e, g):
        return Alignment(identity.rotation, identity.translation, 1.0, best.degenerate)
    return best


def ate_residuals(est: Sequence[Pose], gt: Sequence[Pose], alignment: Alignment) -> np.ndarray:
    """Per-pair translational error after alignment.

    For a rigid alignment S (est -> gt) with T = S^-1, the translation of
    E_i^-1 T G_i has norm |S e_i - g_i| because the estimate's rotation is
    orthonormal; that form is computed directly to avoid compounding round-off.
    With scale enabled the same position form is used.
    """
    e = np.array([p.translation for p in est]).reshape(-1, 3)
    g = np.array([p.translation for p in gt]).reshape(-1, 3)
    return np.linalg.norm(alignment.apply(e) - g, axis=1)


def compute_ate(est: Trajectory, gt: Trajectory, max_dt: float = 0.02, with_scale: bool = False) -> AteReport:
    pairs = associate_timestamps(est, gt, max_dt)
    ie = [i for i, _ in pairs]
    ig = [j for _, j in pairs]
    est_poses = [est.poses[i] for i in ie]
    gt_poses = [gt.poses[j] for j in ig]
    alignment = align(
        np.array([p.translation for p in est_poses]), np.array([p.translation for p in gt_poses]), with_scale
    )
    r = ate_residuals(est_poses, gt_poses, alignment)
    return AteReport(
        rmse=float(np.sqrt(np.mean(r**2))),
        mean=float(np.mean(r)),
        median=float(np.median(r)),
        max=float(np.max(r)),
        matched_pairs=len(pairs),
        alignment=alignment.pose,
        scale=alignment.scale,
        degenerate=alignment.degenerate,
        residuals=r,
    )


@dataclass(frozen=True)
class MapScore:
    precision: float
    recall: float
    mapped: int
    present: int
    true_positives: int


def score_map(exported_map, ground_truth, radius: float = 0.5, ignore_classes=(0,)) -> MapScore:
    """Precision/recall of exported objects against the final true object set.

    `exported_map` is a MapDocument; `ground_truth` is a sequence of
    (class_id, centroid, present) records or a simulator GroundTruthRecord.
    Empty denominators score 1.0.
    """
    truth = getattr(ground_truth, "final_objects", None)
    truth = truth() if callable(truth) else ground_truth
    present = [(c, np.asarray(p, dtype=float)) for c, p, ok in truth if ok and c not in ignore_classes]
    mapped = [(o.class_id, np.asarray(o.centroid, dtype=float)) for o in exported_map.objects]

    def near(c, p, pool):
        return any(c == c2 and np.linalg.norm(p - p2) <= radius for c2, p2 in pool)

    tp = sum(near(c, p, present) for c, p in mapped)
    hit = sum(near(c, p, mapped) for c, p in present)
    precision = tp / len(mapped) if mapped else 1.0
    recall = hit / len(present) if present else 1.0
    return MapScore(precision, recall, len(mapped), len(present), tp)
