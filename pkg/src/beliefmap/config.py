"""Pipeline configuration: YAML file + environment overrides, validated per key.

Keys are addressed by dotted paths (``persistence.belief_threshold``). Any key
can be overridden through the environment variable ``BELIEFMAP_`` followed by
the upper-cased path with dots replaced by double underscores, e.g.
``BELIEFMAP_PERSISTENCE__BELIEF_THRESHOLD=0.7``. Values are parsed as YAML
scalars.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

import yaml

from .association import AssociationConfig
from .errors import ConfigError, IoFailure
from .keypoints import ClassifierConfig
from .persistence import PersistenceConfig
from .tracker import TrackerConfig
from .types import CameraIntrinsics

ENV_PREFIX = "BELIEFMAP_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass(frozen=True)
class MappingConfig:
    keyframe_every: int = 5
    min_measurement_points: int = 3


@dataclass(frozen=True)
class _Key:
    default: Any
    kind: type
    lo: Optional[float] = None
    hi: Optional[float] = None
    open_lo: bool = False
    open_hi: bool = False
    nullable: bool = False
    choices: Optional[tuple] = None

    def check(self, key: str, value: Any) -> Any:
        if value is None:
            if self.nullable:
                return None
            raise ConfigError(key, "must not be null")
        if self.kind is bool:
            if not isinstance(value, bool):
                raise ConfigError(key, f"expected a boolean, got {value!r}")
            return value
        if self.kind is str:
            if not isinstance(value, str):
                raise ConfigError(key, f"expected a string, got {value!r}")
            if self.choices and value.upper() not in self.choices:
                raise ConfigError(key, f"must be one of {', '.join(self.choices)}")
            return value.upper() if self.choices else value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if self.kind is int:
            if float(value) != int(value):
                raise ConfigError(key, f"expected an integer, got {value!r}")
            value = int(value)
        else:
            value = float(value)
            if not math.isfinite(value):
                raise ConfigError(key, "must be finite")
        if self.lo is not None and (value < self.lo or (self.open_lo and value == self.lo)):
            raise ConfigError(key, f"must be {'>' if self.open_lo else '>='} {self.lo}")
        if self.hi is not None and (value > self.hi or (self.open_hi and value == self.hi)):
            raise ConfigError(key, f"must be {'<' if self.open_hi else '<='} {self.hi}")
        return value


CLASS_THRESHOLD_PREFIX = "classifier.depth_threshold."
_CLASS_THRESHOLD = _Key(0.4, float, 0.0, 10.0, open_lo=True)


def _schema_key(key: str) -> Optional[_Key]:
    """Schema entry for a key; per-class depth thresholds are open-ended."""
    if key in SCHEMA:
        return SCHEMA[key]
    if key.startswith(CLASS_THRESHOLD_PREFIX):
        cid = key[len(CLASS_THRESHOLD_PREFIX):]
        if cid.isdigit():
            return _CLASS_THRESHOLD
    return None


SCHEMA: dict[str, _Key] = {
    "classifier.depth_threshold.0": _Key(0.6, float, 0.0, 10.0, open_lo=True),
    "classifier.depth_threshold.56": _Key(0.5, float, 0.0, 10.0, open_lo=True),
    "classifier.default_depth_threshold": _Key(0.4, float, 0.0, 10.0, open_lo=True),
    "classifier.stddev_factor": _Key(1.5, float, 0.0, 100.0, open_lo=True),
    "classifier.occlusion_iou_threshold": _Key(0.2, float, 0.0, 1.0, open_lo=True),
    "classifier.stride": _Key(4, int, 1, 64),
    "classifier.robust_min": _Key(False, bool),
    "classifier.min_valid_samples": _Key(10, int, 1),
    "assoc.iou_threshold": _Key(0.3, float, 0.0, 1.0, open_lo=True, open_hi=True),
    "assoc.ltda_threshold": _Key(0.5, float, 0.0, 10.0, open_lo=True),
    "assoc.keyframe_window_n": _Key(5, int, 1, 10000),
    "ekf.q_pos": _Key(1e-4, float, 0.0, 1e3, open_lo=True),
    "ekf.q_vel": _Key(1e-2, float, 0.0, 1e3, open_lo=True),
    "ekf.r_meas": _Key(1e-2, float, 0.0, 1e3, open_lo=True),
    "ekf.p0_scale": _Key(1.0, float, 0.0, 1e6, open_lo=True),
    "ekf.doc_threshold": _Key(0.15, float, 0.0, 10.0, open_lo=True),
    "persistence.belief_threshold": _Key(0.6, float, 0.0, 1.0, open_lo=True, open_hi=True),
    "persistence.likelihood_scale": _Key(0.5, float, 0.0, 100.0, open_lo=True),
    "persistence.miss_present": _Key(0.3, float, 0.0, 1.0, open_lo=True, open_hi=True),
    "persistence.miss_absent": _Key(0.7, float, 0.0, 1.0, open_lo=True, open_hi=True),
    "persistence.max_range": _Key(5.0, float, 0.0, 100.0, open_lo=True),
    "persistence.frustum_margin": _Key(20.0, float, 0.0, 1000.0),
    "mapping.keyframe_every": _Key(5, int, 1, 10000),
    "mapping.min_measurement_points": _Key(3, int, 1, 10000),
    "camera.fx": _Key(None, float, 0.0, open_lo=True, nullable=True),
    "camera.fy": _Key(None, float, 0.0, open_lo=True, nullable=True),
    "camera.cx": _Key(None, float, 0.0, open_lo=True, nullable=True),
    "camera.cy": _Key(None, float, 0.0, open_lo=True, nullable=True),
    "camera.width": _Key(None, int, 1, nullable=True),
    "camera.height": _Key(None, int, 1, nullable=True),
    "io.frames": _Key(None, str, nullable=True),
    "io.out": _Key(None, str, nullable=True),
    "io.poses_file": _Key("groundtruth.txt", str),
    "log_level": _Key("INFO", str, choices=LOG_LEVELS),
}

# config keys whose dataclass field is named differently
FIELD_NAMES = {
    "classifier.stddev_factor": "stddev_occlusion_factor",
    "persistence.miss_present": "miss_likelihood_present",
    "persistence.miss_absent": "miss_likelihood_absent",
}

# io.* only says where data lives; it does not change results, so it is not hashed
UNHASHED_PREFIXES = ("io.",)


def env_var(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "__")


def _flatten(doc: Mapping, prefix: str = "") -> dict[str, Any]:
    flat = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if _schema_key(key) is not None:
            flat[key] = v
        elif isinstance(v, Mapping) and (
            key + "." == CLASS_THRESHOLD_PREFIX or any(s.startswith(key + ".") for s in SCHEMA)
        ):
            flat.update(_flatten(v, key + "."))
        else:
            raise ConfigError(key, "unknown key")
    return flat


@dataclass(frozen=True)
class PipelineConfig:
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    assoc: AssociationConfig = field(default_factory=AssociationConfig)
    ekf: TrackerConfig = field(default_factory=TrackerConfig)
    persistence: PersistenceConfig = field(default_factory=PersistenceConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    camera: Optional[CameraIntrinsics] = None
    frames_dir: Optional[str] = None
    out_dir: Optional[str] = None
    poses_file: str = "groundtruth.txt"
    log_level: str = "INFO"
    values: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @property
    def config_hash(self) -> str:
        hashed = {k: v for k, v in self.values.items() if not k.startswith(UNHASHED_PREFIXES)}
        blob = json.dumps(hashed, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def echo(self) -> list[str]:
        """Effective configuration as sorted key=value lines."""
        return [f"{k}={json.dumps(v, default=str)}" for k, v in sorted(self.values.items())]

    @classmethod
    def from_values(cls, values: Mapping[str, Any]) -> PipelineConfig:
        flat = {k: SCHEMA[k].default for k in SCHEMA}
        for k, v in values.items():
            spec = _schema_key(k)
            if spec is None:
                raise ConfigError(k, "unknown key")
            flat[k] = spec.check(k, v)
        return _build(flat)


def _section(flat: Mapping[str, Any], name: str) -> dict[str, Any]:
    p = name + "."
    return {k[len(p):]: v for k, v in flat.items() if k.startswith(p)}


def _build(flat: dict[str, Any]) -> PipelineConfig:
    def make(name: str, ctor: Callable, section: Optional[dict] = None):
        section = _section(flat, name) if section is None else section
        kwargs = {FIELD_NAMES.get(f"{name}.{k}", k): v for k, v in section.items()}
        try:
            return ctor(**kwargs)
        except ValueError as exc:
            raise ConfigError(name, str(exc)) from None

    cls = _section(flat, "classifier")
    thresholds = {int(k.split(".")[1]): cls.pop(k) for k in list(cls) if k.startswith("depth_threshold.")}
    cls["depth_threshold_by_class"] = dict(sorted(thresholds.items()))
    classifier = make("classifier", ClassifierConfig, cls)
    cam = _section(flat, "camera")
    given = [k for k, v in cam.items() if v is not None]
    camera = None
    if given:
        missing = sorted(set(cam) - set(given))
        if missing:
            raise ConfigError(f"camera.{missing[0]}", "camera intrinsics must be given completely or not at all")
        camera = make("camera", CameraIntrinsics)
    return PipelineConfig(
        classifier=classifier,
        assoc=make("assoc", AssociationConfig),
        ekf=make("ekf", TrackerConfig),
        persistence=make("persistence", PersistenceConfig),
        mapping=make("mapping", MappingConfig),
        camera=camera,
        frames_dir=flat["io.frames"],
        out_dir=flat["io.out"],
        poses_file=flat["io.poses_file"],
        log_level=flat["log_level"],
        values=dict(flat),
    )


def load_config(path=None, environ: Optional[Mapping[str, str]] = None) -> PipelineConfig:
    """Read a YAML config (or start from defaults), apply env overrides, validate."""
    doc: Any = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except FileNotFoundError:
            raise ConfigError("<file>", f"config file {path} does not exist") from None
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from exc
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"line {mark.line + 1}" if mark is not None else "<file>"
            raise ConfigError(where, "invalid YAML") from None
        if not isinstance(doc, Mapping):
            raise ConfigError("<root>", "config must be a mapping")
    values = _flatten(doc)
    environ = os.environ if environ is None else environ
    env_keys = {env_var(k): k for k in SCHEMA}
    class_prefix = env_var(CLASS_THRESHOLD_PREFIX)
    for name in sorted(environ):
        if name.startswith(class_prefix) and name[len(class_prefix):].isdigit():
            env_keys[name] = CLASS_THRESHOLD_PREFIX + name[len(class_prefix):]
    for name, key in sorted(env_keys.items()):
        raw = environ.get(name)
        if raw is None:
            continue
        try:
            values[key] = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(key, f"unparseable value in {name}") from None
    return PipelineConfig.from_values(values)
