"""Rigid transforms (rotation + translation) and rotation utilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud

ORTHONORMAL_TOL = 1e-6


class InvalidRotationError(ValueError):
    """Matrix fails the rotation test (orthonormality / determinant +1)."""


def _check_rotation(rotation: np.ndarray, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise InvalidRotationError(f"rotation must be 3x3, got {rotation.shape}")
    err = np.abs(rotation @ rotation.T - np.eye(3)).max()
    if err > tol:
        raise InvalidRotationError(f"matrix is not orthonormal (max deviation {err:.3e})")
    det = float(np.linalg.det(rotation))
    if abs(det - 1.0) > tol:
        raise InvalidRotationError(f"matrix determinant {det:.6f} != +1 (reflection?)")
    return rotation


@dataclass(frozen=True)
class RigidTransform:
    """p' = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.ascontiguousarray(_check_rotation(self.rotation))
        tr = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64).reshape(3))
        if not np.isfinite(tr).all():
            raise ValueError("translation contains non-finite values")
        rot.flags.writeable = False
        tr.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """Composition: (self @ other)(p) == self(other(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points):
        if isinstance(points, PointCloud):
            return PointCloud(self.apply(points.points))
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def apply_transform(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    return transform.apply(cloud)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        raise ValueError("axis may not be zero")
    x, y, z = axis / n
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def random_rotation(rng: np.random.Generator, max_angle: float | None = None) -> np.ndarray:
    """Random rotation; uniform over SO(3) when unbounded, otherwise a
    uniform axis with angle drawn uniformly from [0, max_angle]."""
    if max_angle is not None:
        if not 0.0 <= max_angle <= np.pi:
            raise ValueError("max_angle must lie in [0, pi]")
        axis = rng.normal(size=3)
        while np.linalg.norm(axis) < 1e-12:
            axis = rng.normal(size=3)
        angle = rng.uniform(0.0, max_angle)
        return rotation_about_axis(axis, angle)
    # uniform over SO(3) via unit quaternion
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_se3(
    rng: np.random.Generator,
    max_angle: float | None = None,
    max_translation: float = 1.0,
) -> RigidTransform:
    """Random rigid transform: rotation per ``random_rotation``, translation
    uniform in the cube [-max_translation, max_translation]^3."""
    rot = random_rotation(rng, max_angle)
    tr = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(rot, tr)


def geodesic_angle(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Angle of the rotation taking ``r_a`` to ``r_b``, in radians."""
    r_a = np.asarray(r_a, dtype=np.float64)
    r_b = np.asarray(r_b, dtype=np.float64)
    tr = np.trace(r_a.T @ r_b)
    return float(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))
