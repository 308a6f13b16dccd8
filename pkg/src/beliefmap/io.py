"""Readers and writers for the on-disk frame formats.

A frames directory holds:

- ``groundtruth.txt``  TUM trajectory ``timestamp tx ty tz qx qy qz qw``
- ``detections.txt``   ``frame_id class_id x y w h score``
- ``keypoints.txt``    ``frame_id u v depth``
- ``depth_meta.txt``   intrinsics, depth grid stride/scale and ``frame <id> <timestamp>`` lines
- ``depth.npz``        stacked uint16 depth grids, one per frame line, in order

Every text format accepts ``#`` comments and blank lines.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import IoFailure, ParseError
from .types import BoundingBox, CameraIntrinsics, DepthImage, Detection, Frame, KeypointArray, Pose

log = logging.getLogger(__name__)

GROUNDTRUTH_FILE = "groundtruth.txt"
DETECTIONS_FILE = "detections.txt"
KEYPOINTS_FILE = "keypoints.txt"
DEPTH_META_FILE = "depth_meta.txt"
DEPTH_FILE = "depth.npz"


def _read_lines(path) -> list[str]:
    try:
        with open(path) as f:
            return f.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_table(path, ncols: int) -> tuple[np.ndarray, list[int]]:
    """Numeric table with a fixed column count; returns (rows, source line numbers)."""
    rows, linenos = [], []
    for lineno, line in enumerate(_read_lines(path), 1):
        fields = line.split("#", 1)[0].split()
        if not fields:
            continue
        if len(fields) != ncols:
            raise ParseError(path, lineno, f"expected {ncols} fields, got {len(fields)}")
        rows.append(fields)
        linenos.append(lineno)
    if not rows:
        return np.empty((0, ncols)), []
    try:
        table = np.array(rows, dtype=float)
    except ValueError:
        for fields, lineno in zip(rows, linenos):
            try:
                [float(x) for x in fields]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
        raise
    bad = ~np.isfinite(table).all(axis=1)
    if bad.any():
        raise ParseError(path, linenos[int(np.argmax(bad))], "non-finite value")
    return table, linenos


def _check_int(path, table: np.ndarray, linenos: list[int], col: int, name: str) -> None:
    frac = table[:, col] != np.round(table[:, col])
    if frac.any():
        raise ParseError(path, linenos[int(np.argmax(frac))], f"{name} must be an integer")


# trajectories


def read_trajectory(path):
    """TUM trajectory file to a Trajectory (quaternions normalized)."""
    from .evaluation import Trajectory

    table, linenos = _read_table(path, 8)
    poses = []
    for row, lineno in zip(table, linenos):
        try:
            poses.append(Pose(row[1:4], row[4:8]))
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
    ts = table[:, 0]
    if len(ts) > 1:
        dec = np.diff(ts) <= 0
        if dec.any():
            raise ParseError(path, linenos[int(np.argmax(dec)) + 1], "timestamps must be strictly increasing")
    return Trajectory(ts, poses)


def format_trajectory(timestamps: Sequence[float], poses: Sequence[Pose]) -> str:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for t, p in zip(timestamps, poses):
        vals = [t, *p.translation, *p.quaternion]
        lines.append(" ".join(repr(float(x)) for x in vals))
    return "\n".join(lines) + "\n"


def write_trajectory(path, timestamps: Sequence[float], poses: Sequence[Pose]) -> None:
    _write_text(path, format_trajectory(timestamps, poses))


# detections


def read_detections(path, intr: Optional[CameraIntrinsics] = None) -> dict[int, list[Detection]]:
    """Detections grouped by frame id, in file order.

    With intrinsics, boxes are clamped to the image; boxes left without area
    are dropped with a warning.
    """
    table, linenos = _read_table(path, 7)
    _check_int(path, table, linenos, 0, "frame_id")
    _check_int(path, table, linenos, 1, "class_id")
    out: dict[int, list[Detection]] = {}
    for row, lineno in zip(table, linenos):
        fid, cid = int(row[0]), int(row[1])
        x, y, w, h, score = (float(v) for v in row[2:])
        if cid < 0:
            raise ParseError(path, lineno, "class_id must be non-negative")
        if not 0.0 <= score <= 1.0:
            raise ParseError(path, lineno, "score must lie in [0, 1]")
        if w <= 0 or h <= 0:
            log.warning("event=zero_area_box path=%s line=%d", path, lineno)
            continue
        box = BoundingBox(x, y, w, h)
        if intr is not None:
            box = box.clamped(intr.width, intr.height)
            if box is None:
                log.warning("event=box_outside_image path=%s line=%d", path, lineno)
                continue
        out.setdefault(fid, []).append(Detection(box, cid, score))
    return out


def format_detections(detections: Mapping[int, Sequence[Detection]]) -> str:
    lines = ["# frame_id class_id x y w h score"]
    for fid in sorted(detections):
        for d in detections[fid]:
            b = d.box
            lines.append(f"{fid} {d.class_id} {b.x!r} {b.y!r} {b.w!r} {b.h!r} {d.score!r}")
    return "\n".join(lines) + "\n"


def write_detections(path, detections: Mapping[int, Sequence[Detection]]) -> None:
    _write_text(path, format_detections(detections))


# keypoints


def read_keypoints(path, intr: Optional[CameraIntrinsics] = None) -> dict[int, KeypointArray]:
    table, linenos = _read_table(path, 4)
    _check_int(path, table, linenos, 0, "frame_id")
    if intr is not None and len(table):
        inside = (table[:, 1] >= 0) & (table[:, 1] < intr.width) & (table[:, 2] >= 0) & (table[:, 2] < intr.height)
        if not inside.all():
            raise ParseError(path, linenos[int(np.argmin(inside))], "keypoint outside the image")
    neg = table[:, 3] < 0
    if neg.any():
        raise ParseError(path, linenos[int(np.argmax(neg))], "depth must be non-negative")
    fids = table[:, 0].astype(np.int64)
    out = {}
    if len(fids) == 0:
        return out
    # rows of one frame are expected to be contiguous; sort stably otherwise
    order = np.argsort(fids, kind="stable")
    fids, table = fids[order], table[order]
    starts = np.flatnonzero(np.r_[True, fids[1:] != fids[:-1]])
    ends = np.r_[starts[1:], len(fids)]
    for s, e in zip(starts, ends):
        out[int(fids[s])] = KeypointArray(table[s:e, 1].copy(), table[s:e, 2].copy(), table[s:e, 3].copy())
    return out


def format_keypoints(keypoints: Mapping[int, KeypointArray]) -> str:
    lines = ["# frame_id u v depth"]
    for fid in sorted(keypoints):
        k = keypoints[fid]
        for u, v, d in zip(k.u.tolist(), k.v.tolist(), k.depth.tolist()):
            lines.append(f"{fid} {u!r} {v!r} {d!r}")
    return "\n".join(lines) + "\n"


def write_keypoints(path, keypoints: Mapping[int, KeypointArray]) -> None:
    _write_text(path, format_keypoints(keypoints))


# depth


@dataclass(frozen=True)
class DepthMeta:
    intrinsics: CameraIntrinsics
    stride: int
    scale: float
    file: str
    frames: tuple[tuple[int, float], ...]  # (frame_id, timestamp)


def format_depth_meta(meta: DepthMeta) -> str:
    i = meta.intrinsics
    lines = [
        "# depth grid metadata; pixel (u, v) reads cell (v // stride, u // stride); 0 = no measurement",
        f"width {i.width}",
        f"height {i.height}",
        f"fx {float(i.fx)!r}",
        f"fy {float(i.fy)!r}",
        f"cx {float(i.cx)!r}",
        f"cy {float(i.cy)!r}",
        f"stride {meta.stride}",
        f"scale {float(meta.scale)!r}",
        f"file {meta.file}",
    ]
    lines += [f"frame {fid} {float(t)!r}" for fid, t in meta.frames]
    return "\n".join(lines) + "\n"


def read_depth_meta(path) -> DepthMeta:
    kv: dict[str, tuple[str, int]] = {}
    frames = []
    for lineno, line in enumerate(_read_lines(path), 1):
        fields = line.split("#", 1)[0].split()
        if not fields:
            continue
        try:
            if fields[0] == "frame":
                if len(fields) != 3:
                    raise ValueError("expected 'frame <id> <timestamp>'")
                fid, t = int(fields[1]), float(fields[2])
                if frames and (fid <= frames[-1][0] or t <= frames[-1][1]):
                    raise ValueError("frame ids and timestamps must be strictly increasing")
                frames.append((fid, t))
            elif len(fields) == 2:
                kv[fields[0]] = (fields[1], lineno)
            else:
                raise ValueError(f"malformed line {line.strip()!r}")
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None

    def get(key, conv, default=None):
        if key not in kv:
            if default is not None:
                return default
            raise ParseError(path, 0, f"missing key {key!r}")
        raw, lineno = kv[key]
        try:
            return conv(raw)
        except ValueError as exc:
            raise ParseError(path, lineno, f"{key}: {exc}") from None

    try:
        intr = CameraIntrinsics(
            get("fx", float), get("fy", float), get("cx", float), get("cy", float), get("width", int), get("height", int)
        )
    except ValueError as exc:
        raise ParseError(path, 0, str(exc)) from None
    return DepthMeta(intr, get("stride", int, 1), get("scale", float, 1.0), get("file", str, DEPTH_FILE), tuple(frames))


def write_depth(directory, meta: DepthMeta, grids: np.ndarray) -> None:
    directory = Path(directory)
    try:
        np.savez_compressed(directory / meta.file, depth=np.asarray(grids, dtype=np.uint16))
    except OSError as exc:
        raise IoFailure(f"cannot write {directory / meta.file}: {exc}") from exc
    _write_text(directory / DEPTH_META_FILE, format_depth_meta(meta))


def read_depth(directory, meta: DepthMeta) -> Optional[np.ndarray]:
    path = Path(directory) / meta.file
    if not path.exists():
        return None
    try:
        with np.load(path) as z:
            grids = z["depth"]
    except (OSError, KeyError, ValueError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if grids.ndim != 3 or len(grids) != len(meta.frames):
        raise IoFailure(f"{path}: expected {len(meta.frames)} depth grids, found shape {grids.shape}")
    return grids


# frames


def _poses_at(traj, timestamps: Sequence[float], path) -> list[Pose]:
    ts = traj.timestamps
    out = []
    for t in timestamps:
        j = int(np.searchsorted(ts, t))
        best = None
        for k in (j - 1, j):
            if 0 <= k < len(ts) and abs(ts[k] - t) <= 1e-6:
                best = k
        if best is None:
            raise ParseError(path, 0, f"no pose for frame timestamp {t!r}")
        out.append(traj.poses[best])
    return out


def load_frames(
    directory,
    intrinsics: Optional[CameraIntrinsics] = None,
    poses_file: str = GROUNDTRUTH_FILE,
) -> tuple[list[Frame], CameraIntrinsics]:
    """Assemble Frames from a frames directory.

    Camera poses come from `poses_file` (matched on timestamp); intrinsics
    default to those recorded next to the depth grids.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IoFailure(f"frames directory {directory} does not exist")
    meta = read_depth_meta(directory / DEPTH_META_FILE)
    intr = intrinsics or meta.intrinsics
    traj = read_trajectory(directory / poses_file)
    detections = read_detections(directory / DETECTIONS_FILE, intr)
    keypoints = read_keypoints(directory / KEYPOINTS_FILE, intr)
    grids = read_depth(directory, meta)
    poses = _poses_at(traj, [t for _, t in meta.frames], directory / poses_file)
    frames = []
    for i, ((fid, t), pose) in enumerate(zip(meta.frames, poses)):
        depth = None if grids is None else DepthImage(grids[i], meta.stride, meta.scale)
        frames.append(Frame(fid, t, pose, keypoints.get(fid, KeypointArray.empty()), detections.get(fid, ()), depth))
    return frames, intr


def write_frames(
    directory,
    frames: Iterable[Frame],
    intrinsics: CameraIntrinsics,
    stride: int,
    scale: float,
    poses_file: str = GROUNDTRUTH_FILE,
) -> list[Frame]:
    """Write frames whose depth lookups are raw-unit DepthImages; returns the frames."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {directory}: {exc}") from exc
    frames = list(frames)
    grids = []
    for f in frames:
        d = f.depth_lookup
        if not isinstance(d, DepthImage) or d.scale != scale or d.stride != stride:
            raise ValueError("frames must carry DepthImage lookups with the given stride and scale")
        grids.append(d.grid)
    write_trajectory(directory / poses_file, [f.timestamp for f in frames], [f.camera_pose for f in frames])
    write_detections(directory / DETECTIONS_FILE, {f.id: f.detections for f in frames})
    write_keypoints(directory / KEYPOINTS_FILE, {f.id: f.keypoints for f in frames})
    meta = DepthMeta(intrinsics, stride, scale, DEPTH_FILE, tuple((f.id, f.timestamp) for f in frames))
    write_depth(directory, meta, np.stack(grids) if grids else np.zeros((0, 1, 1)))
    return frames
