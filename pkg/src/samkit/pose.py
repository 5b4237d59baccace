"""Frame estimation from fiducial-marker point clouds.

Markers are coloured spheres of known radius; their centres are recovered
from (synthetic) point clouds by RANSAC with a least-squares refinement.
Three base markers define the manipulator base frame, five EE markers an
occlusion-robust end-effector frame (any 3-of-5 subset suffices), and the
red/green/blue triple on each target box defines that box's frame.

Camera capture and colour segmentation are out of scope: the module input
is labelled point clouds. A synthetic cloud generator stands in for the
RGBD sensor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateFitError,
    DegenerateGeometryError,
    DomainError,
    InsufficientMarkersError,
)
from .kinematics import IkOptions, IkResult, JointConfig, SegmentParams, inverse_kinematics
from .transforms import RigidTransform

MARKER_RADIUS_MM = 2.0
MIN_INLIER_FRACTION = 0.6

# Known EE marker layout in the EE frame (mm): four around the shaft plus
# an apex, placed so that no 3-subset is collinear. The physical layout is
# only pictured in the source design, so these coordinates are the
# documented fixture assumption.
EE_MARKER_LAYOUT = {
    "ee0": np.array([10.0, 0.0, 0.0]),
    "ee1": np.array([0.0, 10.0, 0.0]),
    "ee2": np.array([-10.0, 0.0, 0.0]),
    "ee3": np.array([0.0, -10.0, 0.0]),
    "ee4": np.array([0.0, 0.0, 12.0]),
}


@dataclass
class MarkerCloud:
    """Labelled point cloud (camera frame, mm) for one marker.

    Sphere fitting needs at least 4 non-coplanar points; 12 or more are
    recommended for a stable fit.
    """

    label: str
    points: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise DomainError(f"marker {self.label!r}: points must be (N, 3)")


@dataclass
class FrameEstimate:
    """Estimated camera-to-frame transform with fit quality metadata."""

    transform: RigidTransform
    inlier_fraction: float = 1.0
    markers_used: int = 0


def load_marker_clouds(path) -> dict:
    """Read clouds from JSON: a list of {"label": str, "points": [[x,y,z]..]}."""
    payload = json.loads(Path(path).read_text())
    clouds = {}
    for entry in payload:
        cloud = MarkerCloud(label=entry["label"], points=np.asarray(entry["points"]))
        clouds[cloud.label] = cloud
    return clouds


def save_marker_clouds(clouds, path) -> None:
    payload = [
        {"label": c.label, "points": np.asarray(c.points).tolist()}
        for c in (clouds.values() if isinstance(clouds, dict) else clouds)
    ]
    Path(path).write_text(json.dumps(payload))


def make_sphere_cloud(
    center,
    label: str = "m",
    radius: float = MARKER_RADIUS_MM,
    n_points: int = 200,
    noise_sd: float = 0.0,
    outlier_fraction: float = 0.0,
    outlier_extent: float = 10.0,
    seed: int = 0,
) -> MarkerCloud:
    """Synthetic marker observation: points on a sphere surface with
    optional Gaussian noise and uniform box outliers."""
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    dirs = rng.normal(size=(n_points, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = center + radius * dirs
    if noise_sd > 0:
        pts = pts + rng.normal(0.0, noise_sd, size=pts.shape)
    n_out = int(round(outlier_fraction * n_points))
    if n_out > 0:
        idx = rng.choice(n_points, size=n_out, replace=False)
        pts[idx] = center + rng.uniform(-outlier_extent, outlier_extent, size=(n_out, 3))
    return MarkerCloud(label=label, points=pts)


def _sphere_through_four(p: np.ndarray):
    """Centre of the sphere through 4 points, or None when coplanar."""
    a = 2.0 * (p[:3] - p[3])
    rhs = np.einsum("ij,ij->i", p[:3], p[:3]) - p[3] @ p[3]
    det = np.linalg.det(a)
    if abs(det) < 1e-9:
        return None
    return np.linalg.solve(a, rhs)


def fit_sphere_ransac(
    cloud: MarkerCloud,
    radius: float = MARKER_RADIUS_MM,
    iters: int = 200,
    inlier_tol: float = 0.5,
    seed: int = 0,
    min_inlier_fraction: float = MIN_INLIER_FRACTION,
):
    """Estimate a marker centre given the known sphere radius.

    Candidate centres come from exact spheres through random 4-point
    samples; the candidate with the most points within ``inlier_tol`` of
    the known-radius surface wins (ties broken by earliest iteration) and
    is refined by Gauss-Newton least squares over its inliers.

    Returns (center, inlier_fraction). Deterministic for a fixed seed.
    """
    pts = cloud.points
    n = pts.shape[0]
    if n < 4:
        raise DegenerateFitError(
            f"marker {cloud.label!r}: need at least 4 points, got {n}"
        )
    rng = np.random.default_rng(seed)
    best_count = -1
    best_center = None
    for _ in range(iters):
        sample = pts[rng.choice(n, size=4, replace=False)]
        center = _sphere_through_four(sample)
        if center is None:
            continue
        dist = np.abs(np.linalg.norm(pts - center, axis=1) - radius)
        count = int((dist < inlier_tol).sum())
        if count > best_count:
            best_count = count
            best_center = center
    if best_center is None:
        raise DegenerateFitError(f"marker {cloud.label!r}: all samples coplanar")

    center = best_center
    for _ in range(10):
        inliers = pts[np.abs(np.linalg.norm(pts - center, axis=1) - radius) < inlier_tol]
        if inliers.shape[0] < 4:
            break
        delta = inliers - center
        dists = np.linalg.norm(delta, axis=1)
        jac = -delta / dists[:, None]
        res = dists - radius
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        center = center + step
        if np.linalg.norm(step) < 1e-12:
            break
    frac = float(
        (np.abs(np.linalg.norm(pts - center, axis=1) - radius) < inlier_tol).mean()
    )
    if frac < min_inlier_fraction:
        raise DegenerateFitError(
            f"marker {cloud.label!r}: inlier fraction {frac:.2f} below "
            f"{min_inlier_fraction:.2f}"
        )
    return center, frac


def _orthonormal_frame(y_raw: np.ndarray, z_raw: np.ndarray):
    """Right-handed rotation from approximate y/z axes: z is kept, y is
    projected orthogonal to z, x completes the triad."""
    nz = np.linalg.norm(z_raw)
    ny = np.linalg.norm(y_raw)
    if nz < 1e-9 or ny < 1e-9:
        raise DegenerateGeometryError("coincident marker centres")
    z = z_raw / nz
    y = y_raw / ny
    y = y - (y @ z) * z
    ny = np.linalg.norm(y)
    if ny < 1e-9:
        raise DegenerateGeometryError("collinear marker centres")
    y = y / ny
    x = np.cross(y, z)
    rot = np.column_stack([x, y, z])
    return rot


def base_frame(p_r0, p_r1, p_b0, p_offset=(0.0, 0.0, 0.0)) -> FrameEstimate:
    """Manipulator base frame from the two red and one blue base markers.

    y points from red1 to red0, z from blue0 to red1 (re-orthonormalized),
    and the origin is the red0/blue0 midpoint shifted by the design offset
    ``p_offset``, expressed in the base frame so the construction is
    equivariant under rigid motions of the scene.
    """
    p_r0 = np.asarray(p_r0, dtype=float)
    p_r1 = np.asarray(p_r1, dtype=float)
    p_b0 = np.asarray(p_b0, dtype=float)
    rot = _orthonormal_frame(p_r0 - p_r1, p_r1 - p_b0)
    origin = 0.5 * (p_r0 + p_b0) + rot @ np.asarray(p_offset, dtype=float)
    return FrameEstimate(RigidTransform(rot, origin), markers_used=3)


def box_frame(p_r, p_g, p_b, x_offset=(0.0, 0.0, 0.0)) -> FrameEstimate:
    """Target-box frame from its red/green/blue markers.

    y points from green to red, z from blue to red; the origin is the
    green/blue midpoint shifted by ``x_offset`` in the box frame.
    """
    p_r = np.asarray(p_r, dtype=float)
    p_g = np.asarray(p_g, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    rot = _orthonormal_frame(p_r - p_g, p_r - p_b)
    origin = 0.5 * (p_g + p_b) + rot @ np.asarray(x_offset, dtype=float)
    return FrameEstimate(RigidTransform(rot, origin), markers_used=3)


def ee_frame(markers: dict, layout: dict | None = None) -> FrameEstimate:
    """EE frame by rigid registration of detected marker centres onto the
    known layout; works for every subset of 3, 4, or 5 markers."""
    layout = EE_MARKER_LAYOUT if layout is None else layout
    labels = sorted(set(markers) & set(layout))
    if len(labels) < 3:
        raise InsufficientMarkersError(
            f"EE frame needs at least 3 markers, got {len(labels)}"
        )
    cam = np.array([np.asarray(markers[l], dtype=float) for l in labels])
    loc = np.array([np.asarray(layout[l], dtype=float) for l in labels])
    cam_c = cam.mean(axis=0)
    loc_c = loc.mean(axis=0)
    h = (loc - loc_c).T @ (cam - cam_c)
    u, s, vt = np.linalg.svd(h)
    if s[1] < 1e-9:
        raise DegenerateGeometryError("EE marker subset is collinear")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    trans = cam_c - rot @ loc_c
    return FrameEstimate(RigidTransform(rot, trans), markers_used=len(labels))


def physical_joints(
    cam_t_base: RigidTransform,
    cam_t_ee: RigidTransform,
    geom: SegmentParams,
    q_guess: JointConfig | None = None,
    opts: IkOptions | None = None,
) -> IkResult:
    """Physical joint angles from estimated base and EE frames.

    Composes base_T_ee = cam_T_base^-1 . cam_T_ee and inverts the
    kinematics, seeded at ``q_guess`` (in streaming use, the previous
    sample's solution). Non-convergence is reported through the result
    flag.
    """
    base_t_ee = cam_t_base.inverse() @ cam_t_ee
    return inverse_kinematics(base_t_ee, geom, q_init=q_guess, opts=opts)


# ---------------------------------------------------------------------------
# Synthetic scene helpers (stand-ins for the RGBD camera).

BASE_MARKER_SPACING_MM = 40.0


def base_marker_positions(cam_t_base: RigidTransform, p_offset=(0.0, 0.0, 0.0),
                          spacing: float = BASE_MARKER_SPACING_MM):
    """Ground-truth base marker centres consistent with ``base_frame``."""
    rot = cam_t_base.rotation
    y = rot[:, 1]
    z = rot[:, 2]
    mid = cam_t_base.translation - rot @ np.asarray(p_offset, dtype=float)
    p_r1 = mid - 0.5 * spacing * y + 0.5 * spacing * z
    p_r0 = p_r1 + spacing * y
    p_b0 = p_r1 - spacing * z
    return p_r0, p_r1, p_b0


def box_marker_positions(cam_t_box: RigidTransform, x_offset=(0.0, 0.0, 0.0),
                         spacing: float = BASE_MARKER_SPACING_MM):
    """Ground-truth box marker centres consistent with ``box_frame``."""
    rot = cam_t_box.rotation
    y = rot[:, 1]
    z = rot[:, 2]
    mid = cam_t_box.translation - rot @ np.asarray(x_offset, dtype=float)
    p_r = mid + 0.5 * spacing * (y + z)
    p_g = p_r - spacing * y
    p_b = p_r - spacing * z
    return p_r, p_g, p_b


def ee_marker_positions(cam_t_ee: RigidTransform, layout: dict | None = None) -> dict:
    layout = EE_MARKER_LAYOUT if layout is None else layout
    return {label: cam_t_ee.apply(p) for label, p in layout.items()}


def synthesize_scene_clouds(
    marker_centers: dict,
    noise_sd: float = 0.0,
    outlier_fraction: float = 0.0,
    n_points: int = 200,
    seed: int = 0,
) -> dict:
    """Sphere clouds for a dict of label -> centre."""
    clouds = {}
    for i, (label, center) in enumerate(sorted(marker_centers.items())):
        clouds[label] = make_sphere_cloud(
            center,
            label=label,
            n_points=n_points,
            noise_sd=noise_sd,
            outlier_fraction=outlier_fraction,
            seed=seed * 1009 + i,
        )
    return clouds


def fit_centers(clouds: dict, seed: int = 0, iters: int = 150,
                inlier_tol: float = 0.5) -> dict:
    """RANSAC centres for every cloud in a labelled dict."""
    centers = {}
    for i, label in enumerate(sorted(clouds)):
        centers[label], _ = fit_sphere_ransac(
            clouds[label], iters=iters, inlier_tol=inlier_tol, seed=seed * 31 + i
        )
    return centers
