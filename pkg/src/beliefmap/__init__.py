"""Object-level belief mapping for visual SLAM in dynamic and changing scenes."""

from .association import AssociationConfig, associate_long_term, associate_short_term
from .config import PipelineConfig, load_config
from .evaluation import AteReport, Trajectory, align, associate_timestamps, compute_ate, score_map
from .keypoints import ClassifierConfig, classify_keypoints, compute_box_depth_stats, detect_occlusions
from .persistence import PersistenceBelief, PersistenceConfig, belief_update_detection, belief_update_miss
from .pipeline import process_frames, run_pipeline
from .semantic_map import MapObject, MapPoint, SemanticMap, export_map
from .simulator import ScenarioSpec, emit_tum, generate, scenario
from .tracker import TrackerConfig, TrackState, classify_dynamic, track_init, track_predict, track_update
from .types import BoundingBox, CameraIntrinsics, Detection, Frame, Keypoint, Pose, backproject, iou

__version__ = "0.1.0"

__all__ = [
    "align",
    "associate_long_term",
    "associate_short_term",
    "associate_timestamps",
    "AssociationConfig",
    "AteReport",
    "backproject",
    "belief_update_detection",
    "belief_update_miss",
    "BoundingBox",
    "CameraIntrinsics",
    "ClassifierConfig",
    "classify_dynamic",
    "classify_keypoints",
    "compute_ate",
    "compute_box_depth_stats",
    "detect_occlusions",
    "Detection",
    "emit_tum",
    "export_map",
    "Frame",
    "generate",
    "iou",
    "Keypoint",
    "load_config",
    "MapObject",
    "MapPoint",
    "PersistenceBelief",
    "PersistenceConfig",
    "PipelineConfig",
    "Pose",
    "process_frames",
    "run_pipeline",
    "scenario",
    "ScenarioSpec",
    "score_map",
    "SemanticMap",
    "track_init",
    "track_predict",
    "track_update",
    "TrackerConfig",
    "TrackState",
    "Trajectory",
]
