"""Constant-curvature kinematics and numeric inverse kinematics.

The manipulator is a 7-DOF chain: axial translation q1 (mm), base roll q2,
extensible-segment pitch/yaw q3/q4, second-segment pitch q5, forceps yaw q6
and grasp q7 (all degrees at module boundaries, radians internally).

The bendable sections are modelled as circular arcs of uniform curvature.
For the extensible segment the arc length grows with translation,
s = q1 + l1, which is what widens the reachable workspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, NumericalError
from .transforms import RigidTransform, pose_error, rot_z, rotation_angle

# Below this bend angle (rad) the arc is treated as a straight line;
# keeps the 1/kappa terms finite and is far below the FK noise floor.
STRAIGHT_THETA_EPS = 1e-7

JOINT_NAMES = ("q1", "q2", "q3", "q4", "q5", "q6", "q7")

# Default operating limits: q1 in mm, the rest in degrees.
DEFAULT_Q_LIMITS = np.array(
    [
        [0.0, 125.0],
        [-30.0, 30.0],
        [-60.0, 60.0],
        [-60.0, 60.0],
        [-60.0, 60.0],
        [-90.0, 90.0],
        [-60.0, 60.0],
    ]
)


@dataclass(frozen=True)
class SegmentParams:
    """Chain geometry (mm).

    l1        central length of the extensible segment at zero translation
    s2        arc length of segment 2
    connector straight link between the extensible segment end and segment-2 base
    a3        straight link between segment-2 end and the forceps pivot
    d4        forceps length (pivot to tool centre point)
    p_offset  base-marker-to-base offset vector, used by pose estimation
    """

    l1: float = 10.0
    s2: float = 5.0
    connector: float = 2.0
    a3: float = 2.0
    d4: float = 4.0
    p_offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("l1", "s2", "connector", "a3", "d4"):
            if getattr(self, name) <= 0.0:
                raise DomainError(f"geometry length {name} must be positive")

    @property
    def distal_length(self) -> float:
        """Straight-chain length past the extensible segment."""
        return self.connector + self.s2 + self.a3 + self.d4

    def zero_pose_height(self) -> float:
        """EE z at the all-zero configuration."""
        return self.l1 + self.distal_length


@dataclass
class JointConfig:
    """The 7-vector joint state: q1 in mm, q2..q7 in degrees."""

    q1: float = 0.0
    q2: float = 0.0
    q3: float = 0.0
    q4: float = 0.0
    q5: float = 0.0
    q6: float = 0.0
    q7: float = 0.0

    @classmethod
    def zero(cls) -> "JointConfig":
        return cls()

    @classmethod
    def from_array(cls, arr) -> "JointConfig":
        a = np.asarray(arr, dtype=float).reshape(7)
        return cls(*[float(x) for x in a])

    def to_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q3, self.q4, self.q5, self.q6, self.q7])

    # Individual forceps jaw angles; q6/q7 are their mean and half-difference.
    @property
    def qf1(self) -> float:
        return self.q6 + self.q7

    @property
    def qf2(self) -> float:
        return self.q6 - self.q7

    def validate(self, limits: np.ndarray = DEFAULT_Q_LIMITS) -> None:
        vals = self.to_array()
        if not np.all(np.isfinite(vals)):
            raise DomainError("joint vector contains non-finite values")
        for i, (lo, hi) in enumerate(np.asarray(limits, dtype=float)):
            if vals[i] < lo - 1e-12 or vals[i] > hi + 1e-12:
                raise DomainError(
                    f"joint {JOINT_NAMES[i]}={vals[i]:.4f} outside [{lo}, {hi}]"
                )


@dataclass(frozen=True)
class ArcParams:
    """Configuration-space description of one bent segment.

    kappa (1/mm) is the curvature, phi (rad) the bending-plane angle,
    theta (rad) the total bend, s (mm) the arc length.
    """

    kappa: float
    kappa_x: float
    kappa_y: float
    phi: float
    theta: float
    s: float


def segment_arc(q_bend_pitch: float, q_bend_yaw: float, s: float) -> ArcParams:
    """Arc parameters of a segment bent by (pitch, yaw) degrees over length s mm."""
    if s <= 0.0:
        raise DomainError(f"arc length must be positive, got {s}")
    r3 = math.radians(q_bend_pitch)
    r4 = math.radians(q_bend_yaw)
    kx = r3 / s
    ky = r4 / s
    return ArcParams(
        kappa=math.hypot(kx, ky),
        kappa_x=kx,
        kappa_y=ky,
        phi=math.atan2(kx, ky),
        theta=math.hypot(r3, r4),
        s=s,
    )


def segment_fk(arc: ArcParams) -> RigidTransform:
    """Transform across one constant-curvature segment.

    Rotation is the bend conjugated into the bending plane,
    Rz(phi) . Ry(theta) . Rz(-phi); the translation is the arc chord
    [cos(phi), sin(phi), .] * s(1-cos theta)/theta with z = s sin(theta)/theta.
    Below the straight-line threshold the chord degenerates to [0, 0, s].
    """
    cphi, sphi = math.cos(arc.phi), math.sin(arc.phi)
    cth, sth = math.cos(arc.theta), math.sin(arc.theta)
    rot = np.array(
        [
            [cphi * cphi * cth + sphi * sphi, cphi * sphi * (cth - 1.0), cphi * sth],
            [cphi * sphi * (cth - 1.0), sphi * sphi * cth + cphi * cphi, sphi * sth],
            [-sth * cphi, -sth * sphi, cth],
        ]
    )
    if arc.theta < STRAIGHT_THETA_EPS:
        trans = np.array([0.0, 0.0, arc.s])
    else:
        radial = arc.s * (1.0 - cth) / arc.theta
        trans = np.array([cphi * radial, sphi * radial, arc.s * sth / arc.theta])
    return RigidTransform(rot, trans)


def fk_batch(q: np.ndarray, geom: SegmentParams):
    """Vectorized forward kinematics.

    Args:
        q: (B, 7) array of joint vectors, q1 in mm and angles in degrees.
        geom: chain geometry.

    Returns:
        (rot, pos): (B, 3, 3) rotations and (B, 3) EE positions in the base
        frame. No limit checking; callers own validation.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    b = q.shape[0]
    q1 = q[:, 0]
    r2, r3, r4, r5, r6 = (np.radians(q[:, i]) for i in range(1, 6))

    s = q1 + geom.l1
    if np.any(s <= 0.0):
        raise DomainError("extensible arc length q1 + l1 must stay positive")

    theta = np.hypot(r3, r4)
    phi = np.arctan2(r3, r4)
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)

    # Extensible segment: Rz(phi) Ry(theta) Rz(-phi) written out component-wise.
    r_ext = np.empty((b, 3, 3))
    r_ext[:, 0, 0] = cphi * cphi * cth + sphi * sphi
    r_ext[:, 0, 1] = cphi * sphi * (cth - 1.0)
    r_ext[:, 0, 2] = cphi * sth
    r_ext[:, 1, 0] = r_ext[:, 0, 1]
    r_ext[:, 1, 1] = sphi * sphi * cth + cphi * cphi
    r_ext[:, 1, 2] = sphi * sth
    r_ext[:, 2, 0] = -sth * cphi
    r_ext[:, 2, 1] = -sth * sphi
    r_ext[:, 2, 2] = cth

    straight = theta < STRAIGHT_THETA_EPS
    with np.errstate(invalid="ignore", divide="ignore"):
        radial = np.where(straight, 0.0, s * (1.0 - cth) / np.where(straight, 1.0, theta))
        axial = np.where(straight, s, s * sth / np.where(straight, 1.0, theta))
    p_ext = np.stack([cphi * radial, sphi * radial, axial], axis=1)

    # Segment 2: planar pitch arc about y.
    c5, s5 = np.cos(r5), np.sin(r5)
    straight5 = np.abs(r5) < STRAIGHT_THETA_EPS
    with np.errstate(invalid="ignore", divide="ignore"):
        rad5 = np.where(straight5, 0.0, geom.s2 * (1.0 - c5) / np.where(straight5, 1.0, r5))
        ax5 = np.where(straight5, geom.s2, geom.s2 * s5 / np.where(straight5, 1.0, r5))
    r_seg2 = np.zeros((b, 3, 3))
    r_seg2[:, 0, 0] = c5
    r_seg2[:, 0, 2] = s5
    r_seg2[:, 1, 1] = 1.0
    r_seg2[:, 2, 0] = -s5
    r_seg2[:, 2, 2] = c5
    p_seg2 = np.stack([rad5, np.zeros(b), ax5], axis=1)

    # Forceps: yaw about x after the a3 link; tip at d4 along the rotated z.
    c6, s6 = np.cos(r6), np.sin(r6)
    r_fc = np.zeros((b, 3, 3))
    r_fc[:, 0, 0] = 1.0
    r_fc[:, 1, 1] = c6
    r_fc[:, 1, 2] = -s6
    r_fc[:, 2, 1] = s6
    r_fc[:, 2, 2] = c6
    p_fc = np.stack(
        [np.zeros(b), -s6 * geom.d4, geom.a3 + c6 * geom.d4], axis=1
    )

    # Base roll about z.
    c2, s2a = np.cos(r2), np.sin(r2)
    r_base = np.zeros((b, 3, 3))
    r_base[:, 0, 0] = c2
    r_base[:, 0, 1] = -s2a
    r_base[:, 1, 0] = s2a
    r_base[:, 1, 1] = c2
    r_base[:, 2, 2] = 1.0

    # Compose right to left: base . ext . connector . seg2 . forceps
    v = p_seg2 + np.einsum("bij,bj->bi", r_seg2, p_fc)
    v[:, 2] += geom.connector
    w = p_ext + np.einsum("bij,bj->bi", r_ext, v)
    pos = np.einsum("bij,bj->bi", r_base, w)
    rot = np.einsum(
        "bij,bjk->bik", r_base, np.einsum("bij,bjk->bik", r_ext, np.einsum("bij,bjk->bik", r_seg2, r_fc))
    )
    return rot, pos


def manipulator_fk(
    q: JointConfig,
    geom: SegmentParams,
    limits: np.ndarray = DEFAULT_Q_LIMITS,
    check_limits: bool = True,
) -> RigidTransform:
    """Base-to-EE transform for one joint configuration."""
    if check_limits:
        q.validate(limits)
    rot, pos = fk_batch(q.to_array()[None, :], geom)
    return RigidTransform(rot[0], pos[0])


def ee_positions(q: np.ndarray, geom: SegmentParams, chunk: int = 100_000) -> np.ndarray:
    """EE positions for a (N, 7) block of joint vectors, chunked for memory."""
    q = np.asarray(q, dtype=float)
    out = np.empty((q.shape[0], 3))
    for lo in range(0, q.shape[0], chunk):
        hi = min(lo + chunk, q.shape[0])
        out[lo:hi] = fk_batch(q[lo:hi], geom)[1]
    return out


def _pose_residual(q7: np.ndarray, geom: SegmentParams, lambda_rot: float) -> np.ndarray:
    """6-vector pose parameterization [p (mm); lambda_rot * log(R) (rad)]."""
    from .transforms import rotation_log

    rot, pos = fk_batch(q7[None, :], geom)
    return np.concatenate([pos[0], lambda_rot * rotation_log(rot[0])])


def numeric_jacobian(
    q: JointConfig,
    geom: SegmentParams,
    step: float = 1e-4,
    lambda_rot: float = 10.0,
) -> np.ndarray:
    """Central-difference Jacobian of the pose parameterization.

    Column j is d[p; lambda*log(R)] / dq_j for the six actuated joints
    (q1 in mm, q2..q6 in degrees); q7 does not move the tool frame origin
    model and is excluded.
    """
    base = q.to_array()
    jac = np.empty((6, 6))
    for j in range(6):
        hi = base.copy()
        lo = base.copy()
        hi[j] += step
        lo[j] -= step
        jac[:, j] = (
            _pose_residual(hi, geom, lambda_rot) - _pose_residual(lo, geom, lambda_rot)
        ) / (2.0 * step)
    return jac


@dataclass(frozen=True)
class IkOptions:
    """Solver settings for the quasi-Newton inverse kinematics."""

    tol: float = 1e-9              # convergence threshold on |dp| + lambda*|dr|
    gtol: float = 1e-12            # stall threshold on the smooth gradient norm
    max_iters: int = 500
    lambda_rot: float = 10.0       # mm of cost per radian of orientation error
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    max_restarts: int = 8          # extra deterministic starts on failure
    restart_seed: int = 7
    q1_bounds: tuple = (0.0, 125.0)


@dataclass
class IkResult:
    q: JointConfig
    converged: bool
    residual: float          # |dp| + lambda*|dr| at the returned q
    position_error: float
    rotation_error: float
    iterations: int
    restarts: int = 0


def _objective_batch(x: np.ndarray, target: RigidTransform, geom: SegmentParams, lam: float):
    """Smooth cost g = |dp|^2 + (lam*|dr|)^2 and reporting cost f for (B, 6) states."""
    b = x.shape[0]
    q7 = np.zeros((b, 7))
    q7[:, 0] = x[:, 0]
    q7[:, 1:6] = np.degrees(x[:, 1:6])
    rot, pos = fk_batch(q7, geom)
    dp = pos - target.translation
    ep = np.sqrt(np.einsum("bi,bi->b", dp, dp))
    rel = np.einsum("ji,bjk->bik", target.rotation, rot)  # R_d^T R
    sx = rel[:, 2, 1] - rel[:, 1, 2]
    sy = rel[:, 0, 2] - rel[:, 2, 0]
    sz = rel[:, 1, 0] - rel[:, 0, 1]
    sn = 0.5 * np.sqrt(sx * sx + sy * sy + sz * sz)
    cn = 0.5 * (np.einsum("bii->b", rel) - 1.0)
    er = np.arctan2(sn, cn)
    g = ep * ep + (lam * er) ** 2
    f = ep + lam * er
    return g, f, ep, er


# Central-difference steps for the internal state (q1 in mm, angles in rad).
_FD_STEPS = np.array([1e-4, 1e-6, 1e-6, 1e-6, 1e-6, 1e-6])


def _grad(x, target, geom, lam):
    probe = np.repeat(x[None, :], 12, axis=0)
    for j in range(6):
        probe[2 * j, j] += _FD_STEPS[j]
        probe[2 * j + 1, j] -= _FD_STEPS[j]
    g, _, _, _ = _objective_batch(probe, target, geom, lam)
    return (g[0::2] - g[1::2]) / (2.0 * _FD_STEPS)


def _bfgs_solve(x0, target, geom, opts: IkOptions):
    lam = opts.lambda_rot
    x = x0.copy()
    x[0] = np.clip(x[0], *opts.q1_bounds)
    g, f, ep, er = _objective_batch(x[None, :], target, geom, lam)
    g, f, ep, er = g[0], f[0], ep[0], er[0]
    if not np.isfinite(g):
        raise NumericalError("IK objective is not finite at the initial point")
    best = (f, x.copy(), ep, er)
    if f < opts.tol:
        return best, True, 0
    grad = _grad(x, target, geom, lam)
    h = np.eye(6)
    iters = 0
    # Backtracking alphas evaluated speculatively in vectorized blocks; the
    # accepted step is still the largest alpha satisfying Armijo, identical
    # to a sequential shrink-by-backtrack loop.
    alphas_all = opts.backtrack ** np.arange(opts.max_backtracks)
    block = 10
    for iters in range(1, opts.max_iters + 1):
        gnorm = np.linalg.norm(grad)
        if gnorm < opts.gtol:
            break
        d = -h @ grad
        slope = float(d @ grad)
        if slope >= 0.0:  # H lost positive definiteness; restart from steepest descent
            h = np.eye(6)
            d = -grad
            slope = -float(grad @ grad)
        accepted = False
        for lo in range(0, opts.max_backtracks, block):
            alphas = alphas_all[lo : lo + block]
            cand = x[None, :] + alphas[:, None] * d[None, :]
            cand[:, 0] = np.clip(cand[:, 0], *opts.q1_bounds)
            gc, fc, epc, erc = _objective_batch(cand, target, geom, lam)
            passed = np.isfinite(gc) & (gc <= g + opts.armijo_c * alphas * slope)
            if np.any(passed):
                i = int(np.argmax(passed))  # first (largest) passing alpha
                xn = cand[i]
                gn, fn, epn, ern = gc[i], fc[i], epc[i], erc[i]
                accepted = True
                break
        if not accepted:
            break
        grad_n = _grad(xn, target, geom, lam)
        s = xn - x
        y = grad_n - grad
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            sy_outer = np.outer(s, y)
            h = (np.eye(6) - rho * sy_outer) @ h @ (np.eye(6) - rho * sy_outer.T) + rho * np.outer(s, s)
        x, g, f = xn, gn, fn
        grad = grad_n
        if f < best[0]:
            best = (f, x.copy(), epn, ern)
        if f < opts.tol:
            return best, True, iters
        if not np.isfinite(g):
            raise NumericalError("IK objective became non-finite")
    return best, best[0] < opts.tol, iters


def inverse_kinematics(
    target: RigidTransform,
    geom: SegmentParams,
    q_init: JointConfig | None = None,
    opts: IkOptions | None = None,
    limits: np.ndarray = DEFAULT_Q_LIMITS,
) -> IkResult:
    """Solve for the six actuated joints reaching a target pose.

    BFGS with backtracking Armijo line search on the smooth squared pose
    cost; q1 is kept inside its translation bounds by projection after each
    step. The grasp angle q7 passes through from the initial guess. On
    failure the solver retries from deterministic random in-limit starts and
    returns the best candidate flagged non-converged if none reaches tol.
    """
    opts = opts or IkOptions()
    q_init = q_init or JointConfig.zero()
    init = q_init.to_array()
    if not np.all(np.isfinite(init)):
        raise DomainError("q_init must be finite")
    x0 = np.concatenate([[init[0]], np.radians(init[1:6])])

    starts = [x0]
    rng = np.random.default_rng(opts.restart_seed)
    lim = np.asarray(limits, dtype=float)
    for _ in range(opts.max_restarts):
        draw = rng.uniform(lim[:6, 0], lim[:6, 1])
        starts.append(np.concatenate([[draw[0]], np.radians(draw[1:6])]))

    best = None
    total_iters = 0
    for attempt, start in enumerate(starts):
        (f, x, ep, er), converged, iters = _bfgs_solve(start, target, geom, opts)
        total_iters += iters
        if best is None or f < best[0]:
            best = (f, x, ep, er, attempt)
        if converged:
            best = (f, x, ep, er, attempt)
            break
    f, x, ep, er, attempt = best
    q_out = JointConfig(
        q1=float(x[0]),
        q2=float(np.degrees(x[1])),
        q3=float(np.degrees(x[2])),
        q4=float(np.degrees(x[3])),
        q5=float(np.degrees(x[4])),
        q6=float(np.degrees(x[5])),
        q7=q_init.q7,
    )
    return IkResult(
        q=q_out,
        converged=bool(f < opts.tol),
        residual=float(f),
        position_error=float(ep),
        rotation_error=float(er),
        iterations=total_iters,
        restarts=attempt,
    )
