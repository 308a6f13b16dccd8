"""Core value types and geometric primitives.

Conventions: world frame is z-up; the camera frame is x right, y down, z forward
(pinhole). Poses map camera coordinates to world coordinates. Quaternions are
stored in TUM order (qx, qy, qz, qw) and normalized on construction.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidDepth

PERSON = 0
BACKGROUND = -1

# 0-based COCO indices (YOLO convention) for the classes the simulator uses.
COCO_NAMES = {
    0: "person",
    25: "umbrella",
    28: "suitcase",
    41: "cup",
    56: "chair",
    62: "tvmonitor",
    73: "book",
    77: "teddy bear",
}


@dataclass(frozen=True, eq=False)
class Pose:
    translation: np.ndarray
    quaternion: np.ndarray  # qx qy qz qw
    rotation: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("quaternion must be finite and non-zero")
        # renormalizing a unit quaternion can move it by an ulp; skip it so poses round-trip exactly
        if abs(n - 1.0) > 1e-12:
            q = q / n
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "rotation", Rotation.from_quat(q).as_matrix())

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]))

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation: np.ndarray) -> Pose:
        return cls(translation, Rotation.from_matrix(rotation).as_quat())

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply the pose to one point (3,) or a batch (N, 3)."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def inverse_transform(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose.from_matrix(rt, -rt @ self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        return Pose.from_matrix(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        # plain floats keep repr-based serialization numpy-independent
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + 0.5 * self.w, self.y + 0.5 * self.h

    def contains(self, u, v):
        """Half-open containment test; works on scalars and arrays."""
        return (u >= self.x) & (u < self.x2) & (v >= self.y) & (v < self.y2)

    def intersection(self, other: BoundingBox) -> Optional[BoundingBox]:
        x1, y1 = max(self.x, other.x), max(self.y, other.y)
        x2, y2 = min(self.x2, other.x2), min(self.y2, other.y2)
        if x2 <= x1 or y2 <= y1:
            return None
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)

    def clamped(self, width: int, height: int) -> Optional[BoundingBox]:
        """Clip to the image; None when nothing with positive area is left."""
        x1, y1 = max(self.x, 0.0), max(self.y, 0.0)
        x2, y2 = min(self.x2, float(width)), min(self.y2, float(height))
        if x2 <= x1 or y2 <= y1:
            return None
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    class_id: int
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "score", float(self.score))
        if self.class_id < 0:
            raise ValueError("class_id must be non-negative")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")


class KeypointStatus(enum.IntEnum):
    STATIC = 0
    MOVABLE = 1
    DYNAMIC = 2


@dataclass(frozen=True)
class Keypoint:
    u: float
    v: float
    depth: float
    class_id: int = BACKGROUND
    object_id: Optional[int] = None
    status: KeypointStatus = KeypointStatus.STATIC


@dataclass(frozen=True, eq=False)
class KeypointArray:
    """Columnar storage for a frame's keypoints.

    object_id uses -1 for "no owning object".
    """

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    class_id: np.ndarray = None
    object_id: np.ndarray = None
    status: np.ndarray = None

    def __post_init__(self):
        n = len(self.u)
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "depth", np.asarray(self.depth, dtype=float))
        for name, default, dtype in (
            ("class_id", BACKGROUND, np.int64),
            ("object_id", -1, np.int64),
            ("status", int(KeypointStatus.STATIC), np.int8),
        ):
            value = getattr(self, name)
            if value is None:
                value = np.full(n, default, dtype=dtype)
            object.__setattr__(self, name, np.asarray(value, dtype=dtype))
        if not (len(self.v) == len(self.depth) == len(self.class_id) == n):
            raise ValueError("keypoint columns must have equal length")

    @classmethod
    def empty(cls) -> KeypointArray:
        return cls(np.empty(0), np.empty(0), np.empty(0))

    @classmethod
    def from_keypoints(cls, kps: Sequence[Keypoint]) -> KeypointArray:
        return cls(
            [k.u for k in kps],
            [k.v for k in kps],
            [k.depth for k in kps],
            [k.class_id for k in kps],
            [-1 if k.object_id is None else k.object_id for k in kps],
            [int(k.status) for k in kps],
        )

    def __len__(self) -> int:
        return len(self.u)

    def __getitem__(self, i: int) -> Keypoint:
        oid = int(self.object_id[i])
        return Keypoint(
            float(self.u[i]),
            float(self.v[i]),
            float(self.depth[i]),
            int(self.class_id[i]),
            None if oid < 0 else oid,
            KeypointStatus(int(self.status[i])),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def select(self, mask) -> KeypointArray:
        return KeypointArray(
            self.u[mask],
            self.v[mask],
            self.depth[mask],
            self.class_id[mask],
            self.object_id[mask],
            self.status[mask],
        )


class DepthImage:
    """Depth map sampled every `stride` pixels; 0 marks a missing measurement.

    Pixel (u, v) reads grid cell (v // stride, u // stride). Calling the object
    with scalar or array coordinates gives the depth lookup used by the classifier.
    """

    def __init__(self, grid: np.ndarray, stride: int = 1, scale: Optional[float] = None):
        # With a scale the grid holds raw integer sensor units (metres * scale).
        self.grid = np.asarray(grid) if scale is not None else np.asarray(grid, dtype=float)
        self.stride = int(stride)
        self.scale = scale

    def __call__(self, u, v):
        ui = np.clip(np.asarray(u, dtype=np.int64) // self.stride, 0, self.grid.shape[1] - 1)
        vi = np.clip(np.asarray(v, dtype=np.int64) // self.stride, 0, self.grid.shape[0] - 1)
        d = self.grid[vi, ui]
        return d / self.scale if self.scale is not None else d


DepthLookup = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Frame:
    id: int
    timestamp: float
    camera_pose: Pose
    keypoints: KeypointArray
    detections: tuple[Detection, ...] = ()
    depth_lookup: Optional[DepthLookup] = None

    def __post_init__(self):
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError("timestamp must be finite and non-negative")
        object.__setattr__(self, "detections", tuple(self.detections))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # corner arithmetic can leave the ratio a few ulps above 1 for identical boxes
    return min(inter / (a.area + b.area - inter), 1.0)


def backproject_points(u, v, depth, intr: CameraIntrinsics, cam_pose: Pose) -> np.ndarray:
    """Vectorized pinhole back-projection to world coordinates, shape (N, 3)."""
    depth = np.asarray(depth, dtype=float)
    cam = np.stack(
        [(np.asarray(u) - intr.cx) * depth / intr.fx, (np.asarray(v) - intr.cy) * depth / intr.fy, depth],
        axis=-1,
    )
    return cam_pose.transform(cam)


def backproject(kp: Keypoint, intr: CameraIntrinsics, cam_pose: Pose) -> np.ndarray:
    if not (math.isfinite(kp.depth) and kp.depth > 0):
        raise InvalidDepth(f"keypoint depth must be positive and finite, got {kp.depth}")
    return backproject_points(kp.u, kp.v, kp.depth, intr, cam_pose)


def project_points(points: np.ndarray, intr: CameraIntrinsics, cam_pose: Pose):
    """World points (N, 3) to pixel coordinates and camera-frame depth."""
    cam = cam_pose.inverse_transform(np.atleast_2d(points))
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    return u, v, z


def project(point: np.ndarray, intr: CameraIntrinsics, cam_pose: Pose) -> tuple[float, float, float]:
    u, v, z = project_points(point, intr, cam_pose)
    return float(u[0]), float(v[0]), float(z[0])
