"""Deterministic synthetic scenes for changing and dynamic environments.

The world is a closed room with a floor. Objects are axis-aligned boxes
carrying fixed surface landmarks; a camera follows a parametric path and
every frame yields noisy keypoints with depth, a ray-cast depth grid and
box detections for each fully visible object. Object changes (place,
remove, move) are teleports that must happen while the object is out of
view, which `generate` enforces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import yaml

from . import io as fio
from .errors import InvalidScenario, IoFailure, ParseError
from .types import (
    BoundingBox,
    CameraIntrinsics,
    DepthImage,
    Detection,
    Frame,
    KeypointArray,
    Pose,
    project_points,
)

SCENARIOS = ("Static", "OneChair", "Vanishing", "Changing", "Shift", "Replacing", "WalkingPerson")
ACTIONS = ("place", "remove", "move_to")
OBJECTS_FILE = "objects.txt"

# depth (toward the camera), width, height in metres
NOMINAL_SIZES = {
    "chair": (0.5, 0.5, 0.9),
    "teddy bear": (0.3, 0.3, 0.3),
    "umbrella": (0.2, 0.2, 1.0),
    "person": (0.4, 0.3, 1.7),
    "suitcase": (0.35, 0.6, 0.25),
    "tvmonitor": (0.15, 0.5, 0.35),
    "cup": (0.12, 0.12, 0.15),
    "book": (0.2, 0.25, 0.06),
}
CLASS_IDS = {"person": 0, "umbrella": 25, "suitcase": 28, "cup": 41, "chair": 56, "tvmonitor": 62, "book": 73, "teddy bear": 77}


@dataclass(frozen=True)
class CameraPath:
    """Orbit: the camera turns at a constant yaw rate while its centre
    travels a small circle, moving along its viewing direction.
    Fixed: a stationary camera at `center` facing `yaw0_deg`.
    Both add smooth seeded roll/pitch and height perturbations."""

    kind: str = "orbit"
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.12
    height: float = 0.6
    yaw0_deg: float = -60.0
    yaw_rate_deg: float = 40.0
    jitter_deg: float = 0.5
    jitter_height: float = 0.005

    def __post_init__(self):
        if self.kind not in ("orbit", "fixed"):
            raise InvalidScenario(f"unknown camera path kind {self.kind!r}")
        if self.kind == "orbit" and self.yaw_rate_deg == 0:
            raise InvalidScenario("orbit needs a non-zero yaw rate")

    def yaw_deg(self, t: float) -> float:
        return self.yaw0_deg + (self.yaw_rate_deg * t if self.kind == "orbit" else 0.0)

    def frame_at_yaw(self, yaw_deg: float, rate: float) -> int:
        return int(round((yaw_deg - self.yaw0_deg) / self.yaw_rate_deg * rate))

    def pose(self, t: float, phases: np.ndarray) -> Pose:
        psi = math.radians(self.yaw_deg(t))
        if self.kind == "orbit":
            a = psi - math.pi / 2
            x = self.center[0] + self.radius * math.cos(a)
            y = self.center[1] + self.radius * math.sin(a)
        else:
            x, y = self.center
        j = math.radians(self.jitter_deg)
        pitch = j * (math.sin(1.3 * t + phases[0]) + 0.5 * math.sin(3.7 * t + phases[1])) / 1.5
        roll = j * (math.sin(1.1 * t + phases[2]) + 0.5 * math.sin(4.3 * t + phases[3])) / 1.5
        z = self.height + self.jitter_height * math.sin(2.3 * t + phases[4])
        fwd = np.array([math.cos(psi), math.sin(psi), 0.0])
        right = np.array([math.sin(psi), -math.cos(psi), 0.0])
        down = np.array([0.0, 0.0, -1.0])
        base = np.column_stack([right, down, fwd])
        cp, sp, cr, sr = math.cos(pitch), math.sin(pitch), math.cos(roll), math.sin(roll)
        rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
        rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
        return Pose.from_matrix(base @ rx @ rz, np.array([x, y, z]))


@dataclass(frozen=True)
class CircleMotion:
    center: tuple[float, float]
    radius: float
    speed: float  # m/s along the circle
    phase: float = 0.0

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        w = self.speed / self.radius
        a = self.phase + w * t
        pos = np.array([self.center[0] + self.radius * math.cos(a), self.center[1] + self.radius * math.sin(a)])
        vel = self.speed * np.array([-math.sin(a), math.cos(a)])
        return pos, vel


@dataclass(frozen=True)
class SimObject:
    name: str
    class_id: int
    size: tuple[float, float, float]
    position: tuple[float, float, float]  # box centre
    present: bool = True
    motion: Optional[CircleMotion] = None


@dataclass(frozen=True)
class ObjectEvent:
    frame_id: int
    object: str
    action: str
    position: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise InvalidScenario(f"unknown action {self.action!r}")
        if self.action in ("place", "move_to") and self.position is None:
            raise InvalidScenario(f"{self.action} needs a position")


@dataclass(frozen=True)
class SensorModel:
    intrinsics: CameraIntrinsics = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)
    pixel_sigma: float = 0.5
    depth_sigma_fraction: float = 0.01
    depth_stride: int = 4
    depth_scale: float = 5000.0
    object_density: float = 300.0  # landmarks per m^2
    background_density: float = 6.0
    min_facing_cos: float = 0.3
    box_padding: float = 3.0
    detection_score: float = 0.9
    room_half: float = 2.5
    room_height: float = 2.5


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    seed: int = 0
    frame_count: int = 300
    frame_rate: float = 30.0
    camera_path: CameraPath = CameraPath()
    objects: tuple[SimObject, ...] = ()
    object_events: tuple[ObjectEvent, ...] = ()
    sensor: SensorModel = SensorModel()

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise InvalidScenario(f"unknown scenario {self.name!r}")
        if self.frame_count < 1 or not self.frame_rate > 0:
            raise InvalidScenario("frame_count must be >= 1 and frame_rate > 0")
        names = [o.name for o in self.objects]
        if len(set(names)) != len(names):
            raise InvalidScenario("object names must be unique")
        for ev in self.object_events:
            if ev.object not in names:
                raise InvalidScenario(f"event refers to unknown object {ev.object!r}")
            if not 0 <= ev.frame_id < self.frame_count:
                raise InvalidScenario(f"event frame {ev.frame_id} outside the sequence")


# scenario archetypes

SLOT_RADIUS = 1.8


def _slot_xy(deg: float, r: float = SLOT_RADIUS) -> np.ndarray:
    a = math.radians(deg)
    return np.array([r * math.cos(a), r * math.sin(a)])


def _size_at(kind: str, slot_deg: float) -> tuple[float, float, float]:
    d, w, h = NOMINAL_SIZES[kind]
    # depth runs along x for slots facing the camera along x, along y otherwise
    if round(slot_deg / 90.0) % 2 == 1 and abs(slot_deg % 90.0) < 1e-9:
        return (w, d, h)
    return (d, w, h)


def _place(kind: str, slot_deg: float, base_z: float = 0.0, along: float = 0.0) -> tuple:
    size = _size_at(kind, slot_deg)
    xy = _slot_xy(slot_deg)
    a = math.radians(slot_deg)
    xy = xy + along * np.array([-math.sin(a), math.cos(a)])
    return size, (float(xy[0]), float(xy[1]), base_z + size[2] / 2)


def _obj(name: str, kind: str, slot_deg: float, base_z: float = 0.0, along: float = 0.0, present=True) -> SimObject:
    size, pos = _place(kind, slot_deg, base_z, along)
    return SimObject(name, CLASS_IDS[kind], size, pos, present)


def _pos(kind: str, slot_deg: float, base_z: float = 0.0, along: float = 0.0) -> tuple:
    return _place(kind, slot_deg, base_z, along)[1]


CHAIR_TOP = NOMINAL_SIZES["chair"][2]
SUITCASE_TOP = NOMINAL_SIZES["suitcase"][2]


def scenario(name: str, seed: int = 0, frame_count: Optional[int] = None) -> ScenarioSpec:
    """Built-in archetype with its default length (override with frame_count)."""
    path = CameraPath()
    rate = 30.0

    def at(yaw: float) -> int:
        return path.frame_at_yaw(yaw, rate)

    if name == "Static":
        objects = [_obj("chair", "chair", 0), _obj("teddy", "teddy bear", 135), _obj("umbrella", "umbrella", 225)]
        events, n = [], 810
    elif name == "OneChair":
        objects = [_obj("chair", "chair", 0), _obj("teddy", "teddy bear", 135)]
        events = [ObjectEvent(at(495), "chair", "move_to", _pos("chair", 270))]
        n = 1160
    elif name == "Vanishing":
        objects = [
            _obj("chair", "chair", 0),
            _obj("teddy", "teddy bear", 0, CHAIR_TOP),
            _obj("umbrella", "umbrella", 180),
        ]
        events = [
            ObjectEvent(at(540), "chair", "remove"),
            ObjectEvent(at(540), "teddy", "remove"),
            ObjectEvent(at(765), "umbrella", "move_to", _pos("umbrella", 270)),
            ObjectEvent(at(1530), "umbrella", "remove"),
        ]
        n = 1400
    elif name == "Changing":
        objects = [
            _obj("chair1", "chair", 0),
            _obj("chair2", "chair", 180),
            _obj("teddy", "teddy bear", 0, CHAIR_TOP),
            _obj("umbrella1", "umbrella", 135),
            _obj("umbrella2", "umbrella", 315),
        ]
        events = [ObjectEvent(at(450), "teddy", "move_to", _pos("teddy bear", 180, CHAIR_TOP))]
        n = 1100
    elif name == "Shift":
        objects = [
            _obj("umbrella", "umbrella", 225),
            _obj("chair", "chair", 0),
            _obj("teddy", "teddy bear", 0, CHAIR_TOP),
            _obj("suitcase", "suitcase", 180),
            _obj("monitor", "tvmonitor", 180, SUITCASE_TOP, -0.12),
            _obj("mug", "cup", 180, SUITCASE_TOP, 0.22),
        ]
        events = [
            ObjectEvent(at(585), "chair", "move_to", _pos("chair", 90)),
            ObjectEvent(at(585), "teddy", "move_to", _pos("teddy bear", 90, CHAIR_TOP)),
            ObjectEvent(at(810), "umbrella", "move_to", _pos("umbrella", 315)),
            ObjectEvent(at(1125), "suitcase", "move_to", _pos("suitcase", 270)),
            ObjectEvent(at(1125), "monitor", "move_to", _pos("tvmonitor", 270, SUITCASE_TOP, -0.12)),
            ObjectEvent(at(1125), "mug", "move_to", _pos("cup", 270, SUITCASE_TOP, 0.22)),
        ]
        n = 1500
    elif name == "Replacing":
        objects = [
            _obj("chair_teddy", "chair", 0),
            _obj("teddy", "teddy bear", 0, CHAIR_TOP),
            _obj("chair_books", "chair", 180),
            _obj("book", "book", 180, CHAIR_TOP),
            _obj("suitcase", "suitcase", 90),
            _obj("monitor", "tvmonitor", 90, SUITCASE_TOP, -0.12),
            _obj("mug", "cup", 90, SUITCASE_TOP, 0.22),
            _obj("umbrella", "umbrella", 0, present=False),
        ]
        events = [
            ObjectEvent(at(540), "chair_teddy", "remove"),
            ObjectEvent(at(540), "teddy", "remove"),
            ObjectEvent(at(540), "umbrella", "place", _pos("umbrella", 0)),
            ObjectEvent(at(1080), "chair_books", "remove"),
            ObjectEvent(at(1080), "book", "remove"),
        ]
        n = 1300
    elif name == "WalkingPerson":
        path = CameraPath(kind="fixed", center=(-1.0, 0.0), height=0.9, yaw0_deg=0.0, jitter_deg=0.2)
        cam = np.array(path.center)

        def beside(bearing_deg, dist):
            a = math.radians(bearing_deg)
            return cam + dist * np.array([math.cos(a), math.sin(a)])

        cs = NOMINAL_SIZES["chair"]
        cxy, txy = beside(22.0, 2.6), beside(-22.0, 2.6)
        objects = [
            SimObject("chair", CLASS_IDS["chair"], cs, (float(cxy[0]), float(cxy[1]), cs[2] / 2)),
            SimObject("tv", CLASS_IDS["tvmonitor"], (0.15, 0.6, 0.4), (float(txy[0]), float(txy[1]), 0.9)),
            SimObject(
                "person",
                CLASS_IDS["person"],
                NOMINAL_SIZES["person"],
                (1.45, 0.0, NOMINAL_SIZES["person"][2] / 2),
                motion=CircleMotion((1.2, 0.0), 0.25, 0.5),
            ),
        ]
        events, n = [], 300
    else:
        raise InvalidScenario(f"unknown scenario {name!r}")
    return ScenarioSpec(
        name,
        seed,
        frame_count if frame_count is not None else n,
        rate,
        path,
        tuple(objects),
        tuple(sorted(events, key=lambda e: e.frame_id)),
    )


# custom specs


def _tuple(v, n, what):
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise InvalidScenario(f"{what} must be a list of {n} numbers")
    return tuple(float(x) for x in v)


def spec_from_dict(doc: dict) -> ScenarioSpec:
    """Custom scenario: an archetype (`name`) with optional overrides.

    Recognized keys: name, seed, frame_count, frame_rate, camera, objects, events.
    """
    allowed = {"name", "seed", "frame_count", "frame_rate", "camera", "objects", "events"}
    unknown = set(doc) - allowed
    if unknown:
        raise InvalidScenario(f"unknown scenario keys: {sorted(unknown)}")
    if "name" not in doc:
        raise InvalidScenario("scenario needs a name")
    base = scenario(str(doc["name"]), int(doc.get("seed", 0)))
    kw = {}
    if "frame_count" in doc:
        kw["frame_count"] = int(doc["frame_count"])
    if "frame_rate" in doc:
        kw["frame_rate"] = float(doc["frame_rate"])
    if "camera" in doc:
        cam = dict(doc["camera"])
        if "center" in cam:
            cam["center"] = _tuple(cam["center"], 2, "camera.center")
        try:
            kw["camera_path"] = CameraPath(**cam)
        except TypeError as exc:
            raise InvalidScenario(f"camera: {exc}") from None
    if "objects" in doc:
        objs = []
        for o in doc["objects"]:
            o = dict(o)
            kind = o.pop("kind", None)
            motion = o.pop("motion", None)
            if kind is not None:
                o.setdefault("class_id", CLASS_IDS[kind])
                o.setdefault("size", NOMINAL_SIZES[kind])
            try:
                objs.append(
                    SimObject(
                        str(o.pop("name")),
                        int(o.pop("class_id")),
                        _tuple(o.pop("size"), 3, "size"),
                        _tuple(o.pop("position"), 3, "position"),
                        bool(o.pop("present", True)),
                        CircleMotion(_tuple(motion["center"], 2, "motion.center"), float(motion["radius"]),
                                     float(motion["speed"]), float(motion.get("phase", 0.0)))
                        if motion else None,
                    )
                )
            except KeyError as exc:
                raise InvalidScenario(f"object missing field {exc}") from None
            if o:
                raise InvalidScenario(f"unknown object fields: {sorted(o)}")
        kw["objects"] = tuple(objs)
        if "events" not in doc:
            kw["object_events"] = ()
    if "events" in doc:
        evs = []
        for e in doc["events"]:
            pos = e.get("position")
            evs.append(
                ObjectEvent(int(e["frame"]), str(e["object"]), str(e["action"]),
                            None if pos is None else _tuple(pos, 3, "event position"))
            )
        kw["object_events"] = tuple(sorted(evs, key=lambda e: e.frame_id))
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise InvalidScenario(str(exc)) from None


def load_spec(path) -> ScenarioSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read scenario {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        line = getattr(getattr(exc, "problem_mark", None), "line", -1) + 1
        raise ParseError(path, line, "invalid YAML") from None
    if not isinstance(doc, dict):
        raise InvalidScenario("scenario file must hold a mapping")
    return spec_from_dict(doc)


# geometry


def _box_corners(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


def _ray_box(o: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Slab intersection for rays o + t d; returns (t_enter, t_exit) per ray."""
    d = np.where(np.abs(d) < 1e-12, 1e-12, d)
    inv = 1.0 / d
    t1 = (lo - o) * inv
    t2 = (hi - o) * inv
    return np.minimum(t1, t2).max(axis=-1), np.maximum(t1, t2).min(axis=-1)


@dataclass(frozen=True, eq=False)
class _Landmarks:
    offsets: np.ndarray  # (N, 3) relative to the owner's box centre (world points for the room)
    normals: np.ndarray
    owner: np.ndarray  # object index, -1 for the room


def _face_samples(rng, size, density, min_count=4, skip_bottom=True):
    half = np.asarray(size) / 2
    pts, nrm = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            if skip_bottom and axis == 2 and sign < 0:
                continue
            a, b = [k for k in range(3) if k != axis]
            area = size[a] * size[b]
            n = max(min_count, int(round(density * area)))
            p = np.empty((n, 3))
            p[:, axis] = sign * half[axis]
            p[:, a] = rng.uniform(-half[a], half[a], n)
            p[:, b] = rng.uniform(-half[b], half[b], n)
            nv = np.zeros(3)
            nv[axis] = sign
            pts.append(p)
            nrm.append(np.tile(nv, (n, 1)))
    return np.vstack(pts), np.vstack(nrm)


def _room_landmarks(rng, sensor: SensorModel) -> tuple[np.ndarray, np.ndarray]:
    r, h = sensor.room_half, sensor.room_height
    pts, nrm = [], []
    for axis in (0, 1):
        for sign in (-1.0, 1.0):
            n = int(round(sensor.background_density * 2 * r * h))
            p = np.empty((n, 3))
            p[:, axis] = sign * r
            p[:, 1 - axis] = rng.uniform(-r, r, n)
            p[:, 2] = rng.uniform(0, h, n)
            nv = np.zeros(3)
            nv[axis] = -sign
            pts.append(p)
            nrm.append(np.tile(nv, (n, 1)))
    n = int(round(sensor.background_density * 4 * r * r))
    p = np.column_stack([rng.uniform(-r, r, n), rng.uniform(-r, r, n), np.zeros(n)])
    pts.append(p)
    nrm.append(np.tile([0.0, 0.0, 1.0], (n, 1)))
    return np.vstack(pts), np.vstack(nrm)


# ground truth


@dataclass(frozen=True, eq=False)
class GroundTruthRecord:
    timestamps: np.ndarray
    camera_poses: tuple[Pose, ...]
    object_names: tuple[str, ...]
    object_classes: tuple[int, ...]
    object_sizes: np.ndarray  # (M, 3)
    centroids: np.ndarray  # (F, M, 3)
    present: np.ndarray  # (F, M) bool
    velocities: np.ndarray  # (F, M, 3)
    detection_sources: tuple[tuple[int, ...], ...] = ()  # per frame, object index of each detection
    events: tuple[ObjectEvent, ...] = ()

    def object_index(self, name: str) -> int:
        return self.object_names.index(name)

    def final_objects(self) -> list[tuple[int, np.ndarray, bool]]:
        return [(c, self.centroids[-1, m], bool(self.present[-1, m])) for m, c in enumerate(self.object_classes)]

    def trajectory(self):
        from .evaluation import Trajectory

        return Trajectory(self.timestamps, self.camera_poses)


def format_ground_truth(gt: GroundTruthRecord) -> str:
    lines = ["# object <index> <class_id> <sx> <sy> <sz> <name>"]
    for m, (name, c) in enumerate(zip(gt.object_names, gt.object_classes)):
        s = gt.object_sizes[m]
        lines.append(f"# object {m} {c} " + " ".join(repr(float(x)) for x in s) + f" {name}")
    lines.append("# frame_index object_index present cx cy cz vx vy vz")
    for f in range(len(gt.timestamps)):
        for m in range(len(gt.object_names)):
            c, v = gt.centroids[f, m], gt.velocities[f, m]
            lines.append(
                f"{f} {m} {int(gt.present[f, m])} " + " ".join(repr(float(x)) for x in (*c, *v))
            )
    return "\n".join(lines) + "\n"


def load_ground_truth(directory) -> GroundTruthRecord:
    """Read objects.txt plus groundtruth.txt from a frames directory."""
    directory = Path(directory)
    traj = fio.read_trajectory(directory / fio.GROUNDTRUTH_FILE)
    path = directory / OBJECTS_FILE
    names, classes, sizes, rows = [], [], [], []
    for lineno, line in enumerate(fio._read_lines(path), 1):
        f = line.split()
        if not f:
            continue
        try:
            if f[0] == "#":
                if len(f) >= 8 and f[1] == "object":
                    if int(f[2]) != len(names):
                        raise ValueError("object indices must be consecutive")
                    classes.append(int(f[3]))
                    sizes.append([float(x) for x in f[4:7]])
                    names.append(" ".join(f[7:]))
                continue
            if len(f) != 9:
                raise ValueError(f"expected 9 fields, got {len(f)}")
            rows.append([float(x) for x in f])
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
    m = len(names)
    n = len(traj)
    table = np.array(rows, dtype=float).reshape(-1, 9)
    if len(table) != n * m:
        raise ParseError(path, 0, f"expected {n * m} object rows, found {len(table)}")
    table = table.reshape(n, m, 9)
    return GroundTruthRecord(
        traj.timestamps,
        traj.poses,
        tuple(names),
        tuple(classes),
        np.array(sizes).reshape(m, 3),
        table[:, :, 3:6].copy(),
        table[:, :, 2] > 0.5,
        table[:, :, 6:9].copy(),
    )


# generation


def _object_states(spec: ScenarioSpec, timestamps: np.ndarray):
    n, m = len(timestamps), len(spec.objects)
    centroids = np.zeros((n, m, 3))
    velocities = np.zeros((n, m, 3))
    present = np.zeros((n, m), dtype=bool)
    idx = {o.name: k for k, o in enumerate(spec.objects)}
    pos = np.array([o.position for o in spec.objects], dtype=float).reshape(m, 3)
    alive = np.array([o.present for o in spec.objects], dtype=bool)
    events = sorted(spec.object_events, key=lambda e: e.frame_id)
    e = 0
    for f, t in enumerate(timestamps):
        while e < len(events) and events[e].frame_id == f:
            ev = events[e]
            k = idx[ev.object]
            if ev.action == "remove":
                alive[k] = False
            else:
                pos[k] = ev.position
                alive[k] = True
            e += 1
        for k, o in enumerate(spec.objects):
            if o.motion is not None:
                xy, vxy = o.motion.at(t)
                pos[k, :2] = xy
                velocities[f, k, :2] = vxy
        centroids[f] = pos
        present[f] = alive
    return centroids, velocities, present


def _box_in_view(center, size, pose: Pose, intr: CameraIntrinsics) -> bool:
    """True if any corner, face centre or the centre of the box projects into the image."""
    half = np.asarray(size) / 2
    c = np.asarray(center)
    pts = [_box_corners(c - half, c + half), c[None, :]]
    for axis in range(3):
        for sign in (-1, 1):
            q = c.copy()
            q[axis] += sign * half[axis]
            pts.append(q[None, :])
    u, v, z = project_points(np.vstack(pts), intr, pose)
    with np.errstate(invalid="ignore"):
        inside = (z > 0) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return bool(inside.any())


def _validate_events(spec, centroids, present, poses):
    intr = spec.sensor.intrinsics
    idx = {o.name: k for k, o in enumerate(spec.objects)}
    for ev in spec.object_events:
        k = idx[ev.object]
        size = spec.objects[k].size
        f = ev.frame_id
        for g in (f - 1, f):
            if g < 0:
                continue
            for h in (f - 1, f):
                if h < 0:
                    continue
                if present[h, k] and _box_in_view(centroids[h, k], size, poses[g], intr):
                    raise InvalidScenario(
                        f"event '{ev.action} {ev.object}' at frame {f} happens while the object is in view"
                    )


class SimulationStream:
    """Re-iterable, deterministic stream of simulated Frames."""

    def __init__(self, spec: ScenarioSpec, ground_truth: GroundTruthRecord, landmarks: _Landmarks,
                 room: tuple[np.ndarray, np.ndarray]):
        self.spec = spec
        self.ground_truth = ground_truth
        self._landmarks = landmarks
        self._room = room
        s = spec.sensor
        intr = s.intrinsics
        cols = np.arange(0, intr.width, s.depth_stride)
        rows = np.arange(0, intr.height, s.depth_stride)
        uu, vv = np.meshgrid(cols, rows)
        self._rays_cam = np.stack(
            [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu, dtype=float)], axis=-1
        ).reshape(-1, 3)
        self._grid_shape = uu.shape

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.spec.sensor.intrinsics

    def __len__(self) -> int:
        return self.spec.frame_count

    def __iter__(self) -> Iterator[Frame]:
        for f in range(len(self)):
            yield self.frame(f)

    def frame(self, f: int) -> Frame:
        spec, gt, s = self.spec, self.ground_truth, self.spec.sensor
        intr = s.intrinsics
        rng = np.random.default_rng([spec.seed, f])
        pose = gt.camera_poses[f]
        o = pose.translation
        alive = np.flatnonzero(gt.present[f])
        half = gt.object_sizes / 2
        lo = {k: gt.centroids[f, k] - half[k] for k in alive}
        hi = {k: gt.centroids[f, k] + half[k] for k in alive}

        # depth grid
        d = self._rays_cam @ pose.rotation.T
        rlo = np.array([-s.room_half, -s.room_half, 0.0])
        rhi = np.array([s.room_half, s.room_half, s.room_height])
        _, t = _ray_box(o, d, rlo, rhi)
        for k in alive:
            tn, tx = _ray_box(o, d, lo[k], hi[k])
            hit = (tx >= tn) & (tn > 1e-6)
            t = np.where(hit & (tn < t), tn, t)
        t = t * (1.0 + s.depth_sigma_fraction * rng.standard_normal(t.shape))
        grid = np.clip(np.round(t * s.depth_scale), 0, 65535).astype(np.uint16).reshape(self._grid_shape)

        # keypoints
        lm = self._landmarks
        own = np.isin(lm.owner, alive)
        owners = lm.owner[own]
        world = lm.offsets[own] + gt.centroids[f][owners]
        normals = lm.normals[own]
        world = np.vstack([world, self._room[0]])
        normals = np.vstack([normals, self._room[1]])
        u, v, z = project_points(world, intr, pose)
        with np.errstate(invalid="ignore"):
            ok = (z > 0.05) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
        to_cam = o - world
        dist = np.linalg.norm(to_cam, axis=1)
        ok &= np.einsum("ij,ij->i", normals, to_cam) > s.min_facing_cos * dist
        cand = np.flatnonzero(ok)
        if len(cand):
            seg = world[cand] - o
            blocked = np.zeros(len(cand), dtype=bool)
            for k in alive:
                tn, tx = _ray_box(o, seg, lo[k], hi[k])
                blocked |= (tx >= tn) & (tn > 1e-6) & (tn < 1.0 - 1e-6)
            cand = cand[~blocked]
        ku = u[cand] + s.pixel_sigma * rng.standard_normal(len(cand))
        kv = v[cand] + s.pixel_sigma * rng.standard_normal(len(cand))
        kd = z[cand] * (1.0 + s.depth_sigma_fraction * rng.standard_normal(len(cand)))
        keep = (ku >= 0) & (ku < intr.width) & (kv >= 0) & (kv < intr.height)
        keypoints = KeypointArray(ku[keep], kv[keep], kd[keep])

        detections = [
            Detection(BoundingBox(*b), spec.objects[k].class_id, s.detection_score)
            for k, b in self._detection_boxes(f, pose)
        ]
        return Frame(f, float(gt.timestamps[f]), pose, keypoints, detections,
                     DepthImage(grid, s.depth_stride, s.depth_scale))

    def _detection_boxes(self, f: int, pose: Pose) -> list[tuple[int, tuple]]:
        gt, s = self.ground_truth, self.spec.sensor
        intr = s.intrinsics
        out = []
        for k in np.flatnonzero(gt.present[f]):
            c = gt.centroids[f, k]
            half = gt.object_sizes[k] / 2
            u, v, z = project_points(np.vstack([c, _box_corners(c - half, c + half)]), intr, pose)
            if not np.all(z > 0.05):
                continue
            if not (0 <= u[0] < intr.width and 0 <= v[0] < intr.height):
                continue
            if not np.all((u[1:] >= 0) & (u[1:] < intr.width)):
                continue
            box = BoundingBox(
                u[1:].min() - s.box_padding,
                v[1:].min() - s.box_padding,
                u[1:].max() - u[1:].min() + 2 * s.box_padding,
                v[1:].max() - v[1:].min() + 2 * s.box_padding,
            ).clamped(intr.width, intr.height)
            if box is not None:
                out.append((int(k), (box.x, box.y, box.w, box.h)))
        return out


def generate(spec: ScenarioSpec) -> tuple[SimulationStream, GroundTruthRecord]:
    """Build the frame stream and ground truth; validates object events."""
    rng = np.random.default_rng([spec.seed, 1 << 30])
    phases = rng.uniform(0, 2 * math.pi, 5)
    timestamps = np.arange(spec.frame_count) / spec.frame_rate
    poses = tuple(spec.camera_path.pose(float(t), phases) for t in timestamps)
    centroids, velocities, present = _object_states(spec, timestamps)
    _validate_events(spec, centroids, present, poses)

    offsets, normals, owners = [], [], []
    for k, o in enumerate(spec.objects):
        p, n = _face_samples(np.random.default_rng([spec.seed, 1 << 29, k]), o.size, spec.sensor.object_density)
        offsets.append(p)
        normals.append(n)
        owners.append(np.full(len(p), k))
    landmarks = _Landmarks(
        np.vstack(offsets) if offsets else np.empty((0, 3)),
        np.vstack(normals) if normals else np.empty((0, 3)),
        np.concatenate(owners) if owners else np.empty(0, dtype=int),
    )
    room = _room_landmarks(np.random.default_rng([spec.seed, 1 << 28]), spec.sensor)

    gt = GroundTruthRecord(
        timestamps,
        poses,
        tuple(o.name for o in spec.objects),
        tuple(o.class_id for o in spec.objects),
        np.array([o.size for o in spec.objects], dtype=float).reshape(-1, 3),
        centroids,
        present,
        velocities,
        (),
        tuple(spec.object_events),
    )
    stream = SimulationStream(spec, gt, landmarks, room)
    sources = tuple(tuple(k for k, _ in stream._detection_boxes(f, poses[f])) for f in range(spec.frame_count))
    gt = replace(gt, detection_sources=sources)
    stream.ground_truth = gt
    return stream, gt


def emit_tum(stream: SimulationStream, directory) -> Path:
    """Write a simulated sequence as a frames directory (plus objects.txt ground truth)."""
    directory = Path(directory)
    s = stream.spec.sensor
    fio.write_frames(directory, stream, s.intrinsics, s.depth_stride, s.depth_scale)
    fio._write_text(directory / OBJECTS_FILE, format_ground_truth(stream.ground_truth))
    return directory
