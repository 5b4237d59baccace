"""Joint-space to cable/motor-space mapping with decoupling.

Ten cables drive the bending joints and forceps; the two base DOFs (axial
translation and roll) are geared 1:1 to their motors. A cable routed at
offset d/2 from the centreline of a segment bent by theta changes length
by (d/2) * theta, so the whole map is the fixed 12x7 matrix below applied
to (q1 mm, q2 deg, q3..q7 rad).

Rows 7..12 carry decoupling terms: cables for segment 2 and the forceps
run through the proximal sections, so proximal bending is compensated by
the corresponding offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .kinematics import JointConfig

PAIR_SLICES = ((2, 3), (4, 5), (6, 7), (8, 9), (10, 11))  # antagonistic rows


@dataclass(frozen=True)
class CableGeometry:
    """Cable routing offsets (mm).

    d_e     extensible-segment cable offset diameter
    d_w     segment-2 cable offset within segment 2
    d_we    segment-2 cable offset while passing the extensible segment
    d_jep   forceps-cable offset through the extensible pitch section
    d_jey   forceps-cable offset through the extensible yaw section
    d_jwp   forceps-cable offset through the segment-2 pitch section
    d_j     forceps pulley diameter
    """

    d_e: float = 4.8
    d_w: float = 3.6
    d_we: float = 3.6
    d_jep: float = 2.4
    d_jey: float = 2.4
    d_jwp: float = 2.4
    d_j: float = 2.0

    def __post_init__(self):
        for name in ("d_e", "d_w", "d_we", "d_jep", "d_jey", "d_jwp", "d_j"):
            if getattr(self, name) <= 0.0:
                raise DomainError(f"cable offset {name} must be positive")


@dataclass
class CableDeltas:
    """Motor rotations (dm1, dm2) and ten cable length changes (mm).

    Antagonistic pairs (dc3, dc4), (dc5, dc6), (dc7, dc8), (dc9, dc10),
    (dc11, dc12) sum to zero by construction.
    """

    dm1: float
    dm2: float
    dc3: float
    dc4: float
    dc5: float
    dc6: float
    dc7: float
    dc8: float
    dc9: float
    dc10: float
    dc11: float
    dc12: float

    @classmethod
    def from_array(cls, arr) -> "CableDeltas":
        a = np.asarray(arr, dtype=float).reshape(12)
        return cls(*[float(x) for x in a])

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.dm1, self.dm2, self.dc3, self.dc4, self.dc5, self.dc6,
             self.dc7, self.dc8, self.dc9, self.dc10, self.dc11, self.dc12]
        )

    def to_json_list(self) -> list:
        return [float(x) for x in self.to_array()]


def cable_delta_single(theta: float, d: float) -> float:
    """Length change of one cable at offset d for a bend of theta radians.

    Derivation: the cable is a concentric arc at radius rho - d/2 where
    rho = h / theta is the segment's radius of curvature, so
    c = (rho - d/2) * theta and dc = h - c = (d/2) * theta; the segment
    length h cancels.
    """
    return 0.5 * d * theta


def actuation_matrix(cg: CableGeometry) -> np.ndarray:
    """The fixed 12x7 actuation map for (q1 mm, q2 deg, q3..q7 rad)."""
    de, dw, dwe = cg.d_e / 2.0, cg.d_w / 2.0, cg.d_we / 2.0
    jep, jey, jwp, dj = cg.d_jep / 2.0, cg.d_jey / 2.0, cg.d_jwp / 2.0, cg.d_j / 2.0
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, de, -de, 0.0, 0.0, 0.0],
            [0.0, 0.0, -de, de, 0.0, 0.0, 0.0],
            [0.0, 0.0, de, de, 0.0, 0.0, 0.0],
            [0.0, 0.0, -de, -de, 0.0, 0.0, 0.0],
            [0.0, 0.0, dw, 0.0, dwe, 0.0, 0.0],
            [0.0, 0.0, -dw, 0.0, -dwe, 0.0, 0.0],
            [0.0, 0.0, jep, jey, jwp, dj, -dj],
            [0.0, 0.0, -jep, -jey, -jwp, -dj, dj],
            [0.0, 0.0, -jep, -jey, -jwp, dj, dj],
            [0.0, 0.0, jep, jey, jwp, -dj, -dj],
        ]
    )


def _joint_vector_for_matrix(q: JointConfig) -> np.ndarray:
    """(q1 mm, q2 deg, q3..q7 rad): bending joints feed the (d/2)*theta rows
    in radians; q1/q2 are unit gear pass-throughs reported in native units."""
    v = q.to_array()
    out = v.copy()
    out[2:] = np.radians(v[2:])
    return out


def joints_to_cables(q: JointConfig, cg: CableGeometry) -> CableDeltas:
    """Map a joint configuration to the 12 motor/cable displacement changes."""
    v = _joint_vector_for_matrix(q)
    if not np.all(np.isfinite(v)):
        raise DomainError("joint vector contains non-finite values")
    return CableDeltas.from_array(actuation_matrix(cg) @ v)


def cables_to_joints(c: CableDeltas, cg: CableGeometry, pair_tol: float = 1e-9) -> JointConfig:
    """Least-squares left inverse of the actuation map.

    Valid only for self-consistent deltas (antagonistic pairs summing to
    zero); recovers the joint vector exactly for anything produced by
    ``joints_to_cables``.
    """
    arr = c.to_array()
    for i, j in PAIR_SLICES:
        if abs(arr[i] + arr[j]) > pair_tol:
            raise DomainError(
                f"antagonistic pair (rows {i + 1}, {j + 1}) sums to "
                f"{arr[i] + arr[j]:.3e}, expected 0"
            )
    sol, *_ = np.linalg.lstsq(actuation_matrix(cg), arr, rcond=None)
    out = sol.copy()
    out[2:] = np.degrees(sol[2:])
    return JointConfig.from_array(out)
