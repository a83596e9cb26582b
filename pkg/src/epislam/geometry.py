"""SE(2) pose algebra, motion sampling, and field-of-view predicates.

Conventions:
    - Angles are normalized to (-pi, pi] after every operation.
    - ``compose(base, inc)`` applies ``inc`` in the body frame of ``base``.
    - ``between(a, b)`` returns the pose of ``b`` expressed in ``a``'s frame,
      so ``compose(a, as_pose(between(a, b))) == b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Map an angle to the canonical interval (-pi, pi]."""
    t = math.fmod(theta + math.pi, TWO_PI)
    if t <= 0.0:
        t += TWO_PI
    return t - math.pi


@dataclass(frozen=True)
class Pose2:
    """A planar rigid-body pose (meters, meters, radians)."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)

    @staticmethod
    def from_array(v) -> "Pose2":
        return Pose2(float(v[0]), float(v[1]), float(v[2]))


IDENTITY = Pose2(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RelPose:
    """Relative pose of a target expressed in a reference body frame.

    ``dpsi`` is the relative orientation between the target (object) frame
    and the reference (camera) frame; it is the viewpoint angle consumed by
    the classifier uncertainty models.
    """

    dx: float
    dy: float
    dpsi: float

    def __post_init__(self):
        object.__setattr__(self, "dpsi", normalize_angle(self.dpsi))

    def to_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dpsi], dtype=float)

    @staticmethod
    def from_array(v) -> "RelPose":
        return RelPose(float(v[0]), float(v[1]), float(v[2]))


def as_pose(rel: RelPose) -> Pose2:
    """Reinterpret a relative pose as a pose increment."""
    return Pose2(rel.dx, rel.dy, rel.dpsi)


def compose(base: Pose2, increment: Pose2) -> Pose2:
    """Apply ``increment`` in the body frame of ``base``."""
    c, s = math.cos(base.theta), math.sin(base.theta)
    return Pose2(
        base.x + c * increment.x - s * increment.y,
        base.y + s * increment.x + c * increment.y,
        base.theta + increment.theta,
    )


def between(reference: Pose2, target: Pose2) -> RelPose:
    """Express ``target`` in the body frame of ``reference``."""
    c, s = math.cos(reference.theta), math.sin(reference.theta)
    ex, ey = target.x - reference.x, target.y - reference.y
    return RelPose(c * ex + s * ey, -s * ex + c * ey, target.theta - reference.theta)


@dataclass(frozen=True)
class MotionSpec:
    """A body-frame pose increment with additive Gaussian noise.

    ``noise_cov`` must be symmetric positive semidefinite (exactly zero is
    accepted as the deterministic limit).
    """

    action: Pose2
    noise_cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.noise_cov, dtype=float)
        if cov.shape != (3, 3):
            raise ConfigurationError("motion noise covariance must be 3x3")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ConfigurationError("motion noise covariance must be symmetric")
        eigs = np.linalg.eigvalsh(cov)
        if eigs.min() < -1e-12:
            raise ConfigurationError("motion noise covariance must be PSD")
        object.__setattr__(self, "noise_cov", cov)

    def chol(self) -> np.ndarray:
        # PSD-safe factor: scale eigenvectors, exact for SPD and zero cases.
        w, v = np.linalg.eigh(self.noise_cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def sample_motion(pose: Pose2, spec: MotionSpec, rng: np.random.Generator) -> Pose2:
    """Compose the commanded action corrupted by a Gaussian body-frame noise draw."""
    noise = spec.chol() @ rng.standard_normal(3)
    inc = Pose2(spec.action.x + noise[0], spec.action.y + noise[1], spec.action.theta + noise[2])
    return compose(pose, inc)


@dataclass(frozen=True)
class SensorSpec:
    """Range and opening half-angle of the object detector."""

    max_range: float = 10.0
    half_angle: float = math.pi / 3.0

    def __post_init__(self):
        if self.max_range <= 0.0:
            raise ConfigurationError("max_range must be positive")
        if not 0.0 < self.half_angle <= math.pi:
            raise ConfigurationError("half_angle must lie in (0, pi]")


def in_fov(camera: Pose2, obj: Pose2, sensor: SensorSpec) -> bool:
    """Strict interior test: inside range AND bearing within the half-angle cone."""
    ex, ey = obj.x - camera.x, obj.y - camera.y
    dist = math.hypot(ex, ey)
    if dist >= sensor.max_range:
        return False
    bearing = normalize_angle(math.atan2(ey, ex) - camera.theta)
    return abs(bearing) < sensor.half_angle
