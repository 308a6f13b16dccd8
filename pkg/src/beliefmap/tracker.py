"""Constant-velocity Kalman tracking of object centroids and the DOC test.

The centroid is measured in the world frame (keypoints are back-projected with
the known camera pose), so the measurement matrix is the constant position
selector [I3 | 0] and the filter stays linear.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDt, SingularInnovation

H = np.hstack([np.eye(3), np.zeros((3, 3))])
I6 = np.eye(6)


@dataclass(frozen=True)
class TrackerConfig:
    q_pos: float = 1e-4
    q_vel: float = 1e-2
    r_meas: float = 1e-2
    p0_scale: float = 1.0
    doc_threshold: float = 0.15  # m/s

    def __post_init__(self):
        for name in ("q_pos", "q_vel", "r_meas", "p0_scale", "doc_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def Q(self) -> np.ndarray:
        return np.diag([self.q_pos] * 3 + [self.q_vel] * 3)

    @property
    def R(self) -> np.ndarray:
        return self.r_meas * np.eye(3)


@dataclass(frozen=True, eq=False)
class TrackState:
    x: np.ndarray  # x y z vx vy vz
    P: np.ndarray
    last_update: float

    @property
    def position(self) -> np.ndarray:
        return self.x[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[3:]


def transition(dt: float) -> np.ndarray:
    F = np.eye(6)
    F[0, 3] = F[1, 4] = F[2, 5] = dt
    return F


def track_init(centroid, t: float, cfg: TrackerConfig) -> TrackState:
    c = np.asarray(centroid, dtype=float).reshape(3)
    if not np.all(np.isfinite(c)):
        raise ValueError("centroid must be finite")
    return TrackState(np.concatenate([c, np.zeros(3)]), cfg.p0_scale * np.eye(6), float(t))


def track_predict(s: TrackState, dt: float, cfg: TrackerConfig) -> TrackState:
    if not dt > 0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    F = transition(dt)
    P = F @ s.P @ F.T + cfg.Q
    return TrackState(F @ s.x, 0.5 * (P + P.T), s.last_update + dt)


def track_update(s: TrackState, z, cfg: TrackerConfig) -> tuple[TrackState, np.ndarray]:
    """Measurement update with a world-frame centroid; returns (state, innovation)."""
    z = np.asarray(z, dtype=float).reshape(3)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement must be finite")
    innovation = z - H @ s.x
    S = H @ s.P @ H.T + cfg.R
    try:
        K = np.linalg.solve(S.T, (s.P @ H.T).T).T  # P H^T S^-1
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(str(exc)) from exc
    x = s.x + K @ innovation
    P = (I6 - K @ H) @ s.P
    return TrackState(x, 0.5 * (P + P.T), s.last_update), innovation


def reset_velocity(s: TrackState, cfg: TrackerConfig) -> TrackState:
    """Zero the velocity and restore its prior covariance (stale tracks)."""
    x = s.x.copy()
    x[3:] = 0.0
    P = s.P.copy()
    P[3:, :] = 0.0
    P[:, 3:] = 0.0
    P[3:, 3:] = cfg.p0_scale * np.eye(3)
    return TrackState(x, P, s.last_update)


def classify_dynamic(s: TrackState, cfg: TrackerConfig) -> bool:
    return bool(np.linalg.norm(s.x[3:]) > cfg.doc_threshold)
