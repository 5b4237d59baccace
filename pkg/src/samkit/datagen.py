"""Trajectory generation, dataset collection, and error statistics.

Datasets pair commanded and physical joint vectors collected by driving
random interpolated trajectories through the plant at a set of fixed
translations. Error statistics follow the house convention: MAE is the
mean absolute error, MSE the *signed* mean error (not squared), each with
its standard deviation.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError
from .kinematics import DEFAULT_Q_LIMITS, JointConfig
from .plant import HysteresisPlant, PlantParams

DEFAULT_INTERP_STEP_DEG = 3.0

# Waypoint ranges for random trajectories (deg); q6/q7 are commanded zero.
DEFAULT_TRAJ_RANGES = np.array(
    [
        [0.0, 0.0],       # q1 is fixed per trajectory, not swept
        [-30.0, 30.0],
        [-60.0, 60.0],
        [-60.0, 60.0],
        [-60.0, 60.0],
        [0.0, 0.0],
        [0.0, 0.0],
    ]
)


@dataclass(frozen=True)
class TrajectoryRecord:
    """One sample: step index, commanded and physical joint vectors."""

    t: int
    q_cmd: JointConfig
    q_phy: JointConfig


def _interpolate(waypoints: np.ndarray, step_deg: float) -> np.ndarray:
    """Linear interpolation so no per-step joint delta exceeds step_deg."""
    rows = [waypoints[0]]
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        span = float(np.max(np.abs(b - a)))
        n = max(1, int(np.ceil(span / step_deg - 1e-12)))
        seg = np.linspace(a, b, n + 1)[1:]
        rows.append(seg)
    return np.vstack([np.atleast_2d(r) for r in rows])


def gen_random_trajectory(
    ranges: np.ndarray | None = None,
    n_waypoints: int = 40,
    interp_step: float = DEFAULT_INTERP_STEP_DEG,
    q1: float = 0.0,
    seed: int = 0,
    n_records: int | None = None,
) -> np.ndarray:
    """Random waypoint trajectory, linearly interpolated, as (N, 7) commands.

    Waypoints are uniform within ``ranges`` for q2..q5 with q6 = q7 = 0 and
    a constant translation q1; the trajectory starts from the straight
    home pose. When ``n_records`` is given, waypoints are appended until
    the interpolated length reaches it, then truncated to exactly that
    length (deterministic for a fixed seed).
    """
    ranges = DEFAULT_TRAJ_RANGES if ranges is None else np.asarray(ranges, dtype=float)
    if interp_step <= 0:
        raise DomainError("interp_step must be positive")
    rng = np.random.default_rng(seed)
    home = np.zeros(7)
    home[0] = q1

    def draw() -> np.ndarray:
        w = rng.uniform(ranges[:, 0], ranges[:, 1])
        w[0] = q1
        return w

    if n_records is None:
        pts = np.vstack([home] + [draw() for _ in range(n_waypoints)])
        return _interpolate(pts, interp_step)

    traj = np.atleast_2d(home)
    while traj.shape[0] < n_records:
        seg = _interpolate(np.vstack([traj[-1], draw()]), interp_step)
        traj = np.vstack([traj, seg[1:]])
    return traj[:n_records]


@dataclass
class Trajectory:
    q1: float
    seed: int
    role: str
    cmd: np.ndarray
    phy: np.ndarray

    def records(self):
        for t in range(self.cmd.shape[0]):
            yield TrajectoryRecord(
                t, JointConfig.from_array(self.cmd[t]), JointConfig.from_array(self.phy[t])
            )


@dataclass
class Dataset:
    """A bundle of plant trajectories plus provenance metadata."""

    trajectories: list
    plant_hash: str = ""
    base_seed: int = 0
    role: str = ""

    def __len__(self) -> int:
        return sum(t.cmd.shape[0] for t in self.trajectories)

    def cmd_all(self) -> np.ndarray:
        return np.vstack([t.cmd for t in self.trajectories])

    def phy_all(self) -> np.ndarray:
        return np.vstack([t.phy for t in self.trajectories])

    def q1_values(self):
        return sorted({t.q1 for t in self.trajectories})

    def meta(self) -> dict:
        return {
            "role": self.role,
            "base_seed": self.base_seed,
            "plant_hash": self.plant_hash,
            "trajectories": [
                {"q1": t.q1, "seed": t.seed, "n": int(t.cmd.shape[0])}
                for t in self.trajectories
            ],
        }


def trajectory_seed(base_seed: int, index: int) -> int:
    """Deterministic per-trajectory seed stream."""
    return int(base_seed) * 1009 + index


def collect_dataset(
    q1_values,
    n_per: int,
    plant_params: PlantParams | None = None,
    seed: int = 0,
    role: str = "train",
    ranges: np.ndarray | None = None,
    interp_step: float = DEFAULT_INTERP_STEP_DEG,
) -> Dataset:
    """Drive one random trajectory per translation value through the plant.

    Each trajectory runs from plant reset, holds its q1 fixed, and carries
    exactly ``n_per`` records.
    """
    plant_params = plant_params or PlantParams()
    plant = HysteresisPlant(plant_params)
    trajs = []
    for i, q1 in enumerate(q1_values):
        tseed = trajectory_seed(seed, i)
        cmd = gen_random_trajectory(
            ranges=ranges, interp_step=interp_step, q1=float(q1), seed=tseed, n_records=n_per
        )
        phy = plant.run(cmd, reset=True)
        trajs.append(Trajectory(q1=float(q1), seed=tseed, role=role, cmd=cmd, phy=phy))
    return Dataset(
        trajectories=trajs,
        plant_hash=plant_params.content_hash(),
        base_seed=int(seed),
        role=role,
    )


def assert_split_discipline(train_meta: dict, eval_q1: float, eval_seed: int) -> None:
    """Refuse evaluation data that overlaps the training distribution.

    Both the trajectory seed and the translation value must be unseen.
    """
    seeds = {t["seed"] for t in train_meta["trajectories"]}
    q1s = {t["q1"] for t in train_meta["trajectories"]}
    if eval_seed in seeds:
        raise DomainError(f"evaluation trajectory seed {eval_seed} was used in training")
    if float(eval_q1) in q1s:
        raise DomainError(f"translation {eval_q1} mm appears in the training set")


@dataclass
class JointStats:
    """Per-joint error table: MAE/MSE with their standard deviations."""

    mae: np.ndarray
    mae_sd: np.ndarray
    mse: np.ndarray
    mse_sd: np.ndarray
    n: int

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "mae": self.mae.tolist(),
            "mae_sd": self.mae_sd.tolist(),
            "mse": self.mse.tolist(),
            "mse_sd": self.mse_sd.tolist(),
        }


def error_stats(cmd: np.ndarray, phy: np.ndarray) -> JointStats:
    """Per-joint MAE (mean |phy - cmd|) and signed mean error with SDs."""
    cmd = np.atleast_2d(np.asarray(cmd, dtype=float))
    phy = np.atleast_2d(np.asarray(phy, dtype=float))
    if cmd.shape != phy.shape or cmd.shape[0] == 0:
        raise DomainError("error_stats needs matching, non-empty cmd/phy blocks")
    err = phy - cmd
    return JointStats(
        mae=np.abs(err).mean(axis=0),
        mae_sd=np.abs(err).std(axis=0),
        mse=err.mean(axis=0),
        mse_sd=err.std(axis=0),
        n=cmd.shape[0],
    )


def dataset_stats(ds: Dataset) -> dict:
    """Error table per translation group, mirroring the hysteresis study."""
    out = {}
    for q1 in ds.q1_values():
        cmds = np.vstack([t.cmd for t in ds.trajectories if t.q1 == q1])
        phys = np.vstack([t.phy for t in ds.trajectories if t.q1 == q1])
        out[q1] = error_stats(cmds, phys)
    return out


CSV_HEADER = ["t"] + [f"q{i}_cmd" for i in range(1, 8)] + [f"q{i}_phy" for i in range(1, 8)]


def save_dataset(ds: Dataset, directory) -> list:
    """Write one CSV per trajectory plus a JSON sidecar; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, traj in enumerate(ds.trajectories):
        stem = f"{ds.role or 'data'}_q1_{traj.q1:g}_{i:02d}"
        csv_path = directory / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for t in range(traj.cmd.shape[0]):
                writer.writerow(
                    [t]
                    + [f"{v:.10g}" for v in traj.cmd[t]]
                    + [f"{v:.10g}" for v in traj.phy[t]]
                )
        sidecar = {
            "q1_mm": traj.q1,
            "seed": traj.seed,
            "role": traj.role,
            "plant_hash": ds.plant_hash,
            "n": int(traj.cmd.shape[0]),
        }
        with open(directory / f"{stem}.json", "w") as fh:
            json.dump(sidecar, fh, indent=2)
        paths.append(csv_path)
    with open(directory / f"{ds.role or 'data'}_meta.json", "w") as fh:
        json.dump(ds.meta(), fh, indent=2)
    return paths


def load_dataset(directory, role: str = "train") -> Dataset:
    directory = Path(directory)
    meta_path = directory / f"{role}_meta.json"
    if not meta_path.exists():
        raise DomainError(f"no dataset metadata at {meta_path}")
    meta = json.loads(meta_path.read_text())
    trajs = []
    files = sorted(directory.glob(f"{role}_q1_*.csv"))
    for path in files:
        sidecar = json.loads(path.with_suffix(".json").read_text())
        rows = np.genfromtxt(path, delimiter=",", skip_header=1)
        rows = np.atleast_2d(rows)
        trajs.append(
            Trajectory(
                q1=float(sidecar["q1_mm"]),
                seed=int(sidecar["seed"]),
                role=sidecar["role"],
                cmd=rows[:, 1:8],
                phy=rows[:, 8:15],
            )
        )
    return Dataset(
        trajectories=trajs,
        plant_hash=meta.get("plant_hash", ""),
        base_seed=int(meta.get("base_seed", 0)),
        role=role,
    )


def stats_csv(stats_by_q1: dict) -> str:
    """Render per-translation joint statistics in the study's table layout."""
    buf = io.StringIO()
    buf.write("translation_mm,metric," + ",".join(f"q{i}" for i in range(1, 8)) + "\n")
    for q1, st in sorted(stats_by_q1.items()):
        for name, row in (
            ("MAE", st.mae),
            ("MAE_SD", st.mae_sd),
            ("MSE", st.mse),
            ("MSE_SD", st.mse_sd),
        ):
            buf.write(f"{q1:g},{name}," + ",".join(f"{v:.4f}" for v in row) + "\n")
    return buf.getvalue()
