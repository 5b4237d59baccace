"""Reachable-workspace sampling, voxel grids, and volume estimation.

Two manipulator models are compared:

* ``semi_active``: the extensible design, whose bendable arc length grows
  with translation (s = q1 + l1).
* ``general``: a fixed-length design (arc length l1) whose whole chain is
  rigidly translated along z instead.

EE positions are sampled over the joint box with a scrambled Halton
sequence (deterministic per seed) and rasterized into a boolean voxel
grid. Volumes come from composite Simpson integration of per-slice
cross-sectional areas.

Two volume flavours are reported: the *reachable* volume counts occupied
voxels only; the *total* volume additionally fills regions enclosed by
the reachable set in each z-slice (the unreachable interior pocket that
the tip cannot enter).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.stats import qmc

from .errors import DomainError
from .kinematics import DEFAULT_Q_LIMITS, SegmentParams, ee_positions

MODES = ("semi_active", "general")


@dataclass
class WorkspaceGrid:
    """Boolean occupancy over an axis-aligned voxel lattice (mm)."""

    voxel_size: float
    origin: np.ndarray            # min corner of voxel (0,0,0)
    occupancy: np.ndarray         # bool, shape (nx, ny, nz)
    mode: str = ""
    q1_max: float = 0.0
    n_samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.voxel_size <= 0.0:
            raise DomainError("voxel_size must be positive")
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.occupancy = np.asarray(self.occupancy, dtype=bool)

    @property
    def bounds(self):
        hi = self.origin + self.voxel_size * np.array(self.occupancy.shape)
        return self.origin.copy(), hi

    def occupied_count(self) -> int:
        return int(self.occupancy.sum())


def _joint_box(q1_max: float, limits: np.ndarray):
    lim = np.asarray(limits, dtype=float)
    lo = np.array([0.0, lim[1, 0], lim[2, 0], lim[3, 0], lim[4, 0]])
    hi = np.array([q1_max, lim[1, 1], lim[2, 1], lim[3, 1], lim[4, 1]])
    return lo, hi


def sample_workspace(
    geom: SegmentParams,
    q1_max: float,
    mode: str,
    n_samples: int,
    seed: int,
    voxel_size: float = 1.0,
    limits: np.ndarray = DEFAULT_Q_LIMITS,
) -> WorkspaceGrid:
    """Rasterize EE positions reachable over the joint box into a voxel grid.

    Sweeps (q1 | z-translation, q2..q5) with a scrambled Halton sequence;
    q6 and q7 are held at zero, the data-collection convention. In
    ``general`` mode the arc length is fixed at l1 and the sampled first
    coordinate becomes a rigid z-shift of the whole chain, so at
    q1_max = 0 both modes produce bit-identical occupancy for equal seeds.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    if n_samples <= 0:
        raise DomainError("n_samples must be positive")
    if q1_max < 0:
        raise DomainError("q1_max must be non-negative")

    lo, hi = _joint_box(q1_max, limits)
    eng = qmc.Halton(d=5, scramble=True, seed=seed)
    u = eng.random(n_samples)
    sweep = lo + u * (hi - lo)

    q = np.zeros((n_samples, 7))
    q[:, 1:5] = sweep[:, 1:5]
    if mode == "semi_active":
        q[:, 0] = sweep[:, 0]
        pts = ee_positions(q, geom)
    else:
        pts = ee_positions(q, geom)
        pts[:, 2] = pts[:, 2] + sweep[:, 0]

    origin = pts.min(axis=0) - voxel_size
    top = pts.max(axis=0) + voxel_size
    shape = np.ceil((top - origin) / voxel_size).astype(int) + 1
    idx = np.floor((pts - origin) / voxel_size).astype(np.int64)
    flat = np.ravel_multi_index((idx[:, 0], idx[:, 1], idx[:, 2]), tuple(shape))
    occ = np.zeros(int(np.prod(shape)), dtype=bool)
    occ[flat] = True
    return WorkspaceGrid(
        voxel_size=voxel_size,
        origin=origin,
        occupancy=occ.reshape(tuple(shape)),
        mode=mode,
        q1_max=float(q1_max),
        n_samples=int(n_samples),
        seed=int(seed),
    )


def _simpson_integrate(areas: np.ndarray, h: float) -> float:
    """Composite Simpson over uniformly spaced slice areas.

    Requires an odd number of samples; an empty slice is appended when the
    count is even (the grid is padded, not re-weighted).
    """
    a = np.asarray(areas, dtype=float)
    if a.size == 0:
        return 0.0
    if a.size == 1:
        return float(a[0] * h)
    if a.size % 2 == 0:
        a = np.append(a, 0.0)
    w = np.ones(a.size)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((h / 3.0) * (w * a).sum())


def simpson_volume(grid: WorkspaceGrid) -> float:
    """Workspace volume (mm^3): per-z-slice occupied area, Simpson along z."""
    areas = grid.occupancy.sum(axis=(0, 1)) * grid.voxel_size**2
    return _simpson_integrate(areas, grid.voxel_size)


def filled_occupancy(grid: WorkspaceGrid) -> np.ndarray:
    """Occupancy with enclosed per-slice interior regions filled in.

    The filled grid represents the *total* workspace envelope including the
    interior pocket the tip cannot reach (it is surrounded by reachable
    points in its slice but never visited).
    """
    occ = grid.occupancy
    filled = np.empty_like(occ)
    for k in range(occ.shape[2]):
        filled[:, :, k] = ndimage.binary_fill_holes(occ[:, :, k])
    return filled


def total_volume(grid: WorkspaceGrid) -> float:
    """Simpson volume of the filled (reachable + enclosed) envelope."""
    filled = filled_occupancy(grid)
    areas = filled.sum(axis=(0, 1)) * grid.voxel_size**2
    return _simpson_integrate(areas, grid.voxel_size)


@dataclass
class WorkspaceReport:
    """Volume table for the growth study plus the workspace-gain ratio."""

    q1_values: list
    semi_volumes: list            # reachable volume per q1_max
    general_reachable: float      # fixed-length design, full translation sweep
    general_total: float          # same, enclosed interior included
    semi_total: float             # extensible design at max translation, filled
    gain_ratio: float             # semi_total / general_reachable
    voxel_size: float = 1.0
    n_samples: int = 0
    seed: int = 0

    def rows(self):
        out = [("semi_active", q, v) for q, v in zip(self.q1_values, self.semi_volumes)]
        out.append(("general_reachable", self.q1_values[-1], self.general_reachable))
        out.append(("general_total", self.q1_values[-1], self.general_total))
        out.append(("semi_active_total", self.q1_values[-1], self.semi_total))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("mode,q1_max_mm,volume_mm3\n")
        for mode, q1, vol in self.rows():
            buf.write(f"{mode},{q1:g},{vol:.6g}\n")
        buf.write(f"gain_ratio,{self.q1_values[-1]:g},{self.gain_ratio:.6g}\n")
        return buf.getvalue()


def workspace_report(
    geom: SegmentParams,
    q1_values=(0.0, 25.0, 50.0, 75.0, 100.0, 125.0),
    n_samples: int = 1_000_000,
    seed: int = 12345,
    voxel_size: float = 1.0,
    limits: np.ndarray = DEFAULT_Q_LIMITS,
) -> WorkspaceReport:
    """Reproduce the volume-vs-translation study.

    Emits the extensible design's reachable volume at each translation
    budget, the fixed-length design's reachable and total volumes at the
    largest budget, and the workspace-gain ratio
    (total extensible / reachable fixed-length).
    """
    q1_values = [float(v) for v in q1_values]
    semi_vols = []
    semi_grid_last = None
    for q1m in q1_values:
        grid = sample_workspace(geom, q1m, "semi_active", n_samples, seed,
                                voxel_size=voxel_size, limits=limits)
        semi_vols.append(simpson_volume(grid))
        semi_grid_last = grid
    gen_grid = sample_workspace(geom, q1_values[-1], "general", n_samples, seed,
                                voxel_size=voxel_size, limits=limits)
    gen_reach = simpson_volume(gen_grid)
    gen_total = total_volume(gen_grid)
    semi_total = total_volume(semi_grid_last)
    return WorkspaceReport(
        q1_values=q1_values,
        semi_volumes=semi_vols,
        general_reachable=gen_reach,
        general_total=gen_total,
        semi_total=semi_total,
        gain_ratio=semi_total / gen_reach if gen_reach > 0 else float("nan"),
        voxel_size=voxel_size,
        n_samples=n_samples,
        seed=seed,
    )


def rasterize_solid(predicate, lo, hi, voxel_size: float) -> WorkspaceGrid:
    """Voxelize an analytic solid: a voxel is occupied when its centre
    satisfies ``predicate``. Test utility for validating the Simpson
    estimator against closed-form volumes."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    shape = np.ceil((hi - lo) / voxel_size).astype(int) + 1
    xs = lo[0] + (np.arange(shape[0]) + 0.5) * voxel_size
    ys = lo[1] + (np.arange(shape[1]) + 0.5) * voxel_size
    zs = lo[2] + (np.arange(shape[2]) + 0.5) * voxel_size
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    occ = predicate(gx, gy, gz)
    return WorkspaceGrid(voxel_size=voxel_size, origin=lo, occupancy=occ)


def occupancy_rle(grid: WorkspaceGrid) -> dict:
    """Run-length encode the flattened occupancy for the voxel dump.

    Format: alternating run lengths starting with the empty state, over the
    C-ordered flattened grid, plus bounds metadata.
    """
    flat = grid.occupancy.reshape(-1)
    change = np.flatnonzero(np.diff(flat.view(np.int8))) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(edges).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    lo, hi = grid.bounds
    return {
        "voxel_size_mm": grid.voxel_size,
        "origin_mm": lo.tolist(),
        "shape": list(grid.occupancy.shape),
        "mode": grid.mode,
        "q1_max_mm": grid.q1_max,
        "n_samples": grid.n_samples,
        "seed": grid.seed,
        "runs_empty_first": runs,
    }


def occupancy_from_rle(payload: dict) -> WorkspaceGrid:
    shape = tuple(payload["shape"])
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    pos = 0
    state = False
    for run in payload["runs_empty_first"]:
        if state:
            flat[pos : pos + run] = True
        pos += run
        state = not state
    return WorkspaceGrid(
        voxel_size=float(payload["voxel_size_mm"]),
        origin=np.asarray(payload["origin_mm"], dtype=float),
        occupancy=flat.reshape(shape),
        mode=payload.get("mode", ""),
        q1_max=float(payload.get("q1_max_mm", 0.0)),
        n_samples=int(payload.get("n_samples", 0)),
        seed=int(payload.get("seed", 0)),
    )


def dump_voxels(grid: WorkspaceGrid, path) -> None:
    with open(path, "w") as fh:
        json.dump(occupancy_rle(grid), fh)
