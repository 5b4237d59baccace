"""Rigid-body transforms and rotation utilities.

All translations are in millimetres, all internal angles in radians.
Transforms serialize to JSON-friendly row-major 16-element lists of the
4x4 homogeneous matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

ORTHONORMAL_TOL = 1e-9


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(rot: np.ndarray) -> float:
    """Rotation angle of a rotation matrix, stable near 0 and near pi.

    Uses atan2(|skew(R)|, (trace-1)/2); the sine part keeps precision for
    tiny angles where arccos of the trace would lose ~8 digits.
    """
    vx = rot[2, 1] - rot[1, 2]
    vy = rot[0, 2] - rot[2, 0]
    vz = rot[1, 0] - rot[0, 1]
    s = 0.5 * np.sqrt(vx * vx + vy * vy + vz * vz)
    c = 0.5 * (np.trace(rot) - 1.0)
    return float(np.arctan2(s, c))


def rotation_log(rot: np.ndarray) -> np.ndarray:
    """Axis-angle vector (theta * unit axis) of a rotation matrix."""
    theta = rotation_angle(rot)
    v = 0.5 * np.array(
        [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
    )
    if theta < 1e-10:
        # log(R) ~ skew part for infinitesimal rotations
        return v
    if theta > np.pi - 1e-6:
        # near pi the skew part vanishes; recover axis from the symmetric part
        a = np.sqrt(np.maximum(np.diag(rot) - np.cos(theta), 0.0) / (1.0 - np.cos(theta)))
        # fix signs using the largest off-diagonal sums
        i = int(np.argmax(a))
        if a[i] > 0:
            for j in range(3):
                if j != i:
                    a[j] = (rot[i, j] + rot[j, i]) / (2.0 * a[i] * (1.0 - np.cos(theta)))
        axis = a / np.linalg.norm(a)
        if np.dot(axis, v) < 0:
            axis = -axis
        return theta * axis
    return v * (theta / np.sin(theta))


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues formula."""
    u = np.asarray(axis, dtype=float)
    u = u / np.linalg.norm(u)
    k = np.array([[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


@dataclass
class RigidTransform:
    """Rotation (3x3 orthonormal) plus translation (mm)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float).reshape(4, 4)
        return cls(m[:3, :3].copy(), m[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def validate(self, tol: float = ORTHONORMAL_TOL) -> None:
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > tol:
            raise DomainError(f"rotation not orthonormal (max deviation {err:.3e})")
        det = np.linalg.det(self.rotation)
        if abs(det - 1.0) > tol:
            raise DomainError(f"rotation determinant {det:.12f} != +1")

    def to_flat16(self) -> list:
        """Row-major 16-element list of the homogeneous matrix."""
        return [float(x) for x in self.matrix().reshape(-1)]

    @classmethod
    def from_flat16(cls, flat) -> "RigidTransform":
        arr = np.asarray(flat, dtype=float)
        if arr.size != 16:
            raise DomainError(f"expected 16 elements, got {arr.size}")
        return cls.from_matrix(arr.reshape(4, 4))


def pose_error(t: RigidTransform, target: RigidTransform, lambda_rot: float = 10.0):
    """Split pose discrepancy: (position mm, rotation rad, combined).

    combined = |dp| + lambda_rot * |dr|, the scalar minimized by the IK
    solver; lambda_rot converts radians into millimetre-equivalent cost.
    """
    ep = float(np.linalg.norm(t.translation - target.translation))
    er = rotation_angle(target.rotation.T @ t.rotation)
    return ep, er, ep + lambda_rot * er
