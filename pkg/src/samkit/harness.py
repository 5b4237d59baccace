"""End-to-end evaluation pipelines.

Builds the train/valid/test splits, trains the command-estimator ensemble,
and runs the two validation tasks: random-trajectory tracking at unseen
translations and the box pointing task in operational space.
"""

from __future__ import annotations

import concurrent.futures
import json
from dataclasses import dataclass, field

import numpy as np

from .controller import make_controller, reset as controller_reset, run_sequence
from .datagen import (
    DEFAULT_INTERP_STEP_DEG,
    Dataset,
    JointStats,
    assert_split_discipline,
    collect_dataset,
    error_stats,
    gen_random_trajectory,
    trajectory_seed,
)
from .errors import DomainError
from .kinematics import JointConfig, SegmentParams, inverse_kinematics, manipulator_fk
from .plant import HysteresisPlant, PlantParams
from .pose import (
    base_frame,
    base_marker_positions,
    box_frame,
    box_marker_positions,
    fit_centers,
    synthesize_scene_clouds,
)
from .tcn import TcnConfig, TcnModel, TrainParams, train, windows_from_dataset
from .transforms import RigidTransform, rot_z

TRAIN_Q1_VALUES = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)
UNSEEN_Q1_VALUES = (5.0, 25.0, 45.0)
DESK_RECORDS_PER_TRANSLATION = 1000
PAPER_RECORDS_PER_TRANSLATION = 4955
DESK_EPOCHS = 500
PAPER_EPOCHS = 10000
BOX_HEIGHTS_MM = (20.0, 35.0, 50.0, 65.0, 80.0)

# Seed offsets keeping the trajectory streams of the three roles disjoint.
VALID_SEED_OFFSET = 1000
TEST_SEED_OFFSET = 2000
EVAL_SEED_OFFSET = 5000


def make_splits(
    plant_params: PlantParams | None = None,
    base_seed: int = 0,
    n_per: int = DESK_RECORDS_PER_TRANSLATION,
    q1_values=TRAIN_Q1_VALUES,
):
    """Train/valid/test datasets with disjoint trajectory seed streams."""
    plant_params = plant_params or PlantParams()
    train_ds = collect_dataset(q1_values, n_per, plant_params, seed=base_seed, role="train")
    valid_ds = collect_dataset(
        q1_values, max(n_per // 4, 50), plant_params,
        seed=base_seed + VALID_SEED_OFFSET, role="valid",
    )
    test_ds = collect_dataset(
        q1_values, max(n_per // 4, 50), plant_params,
        seed=base_seed + TEST_SEED_OFFSET, role="test",
    )
    return train_ds, valid_ds, test_ds


def _train_job(args):
    train_ds, valid_ds, cfg, hp = args
    xtr = windows_from_dataset(train_ds, cfg.L)
    xva = windows_from_dataset(valid_ds, cfg.L)
    meta = train_ds.meta()
    result = train(xtr, xva, cfg, hp, train_meta=meta)
    return result


def train_ensemble(
    train_ds: Dataset,
    valid_ds: Dataset,
    L: int = 10,
    seeds=(0, 1, 2),
    hp: TrainParams | None = None,
    workers: int = 1,
):
    """Train one command estimator per seed on the same data.

    The members differ only by weight initialization (and the induced
    shuffling), which is what the output averaging smooths over. Training
    jobs are independent and may run in parallel processes.
    """
    hp = hp or TrainParams(epochs=DESK_EPOCHS)
    jobs = [
        (train_ds, valid_ds, TcnConfig(L=L, seed=seed), hp) for seed in seeds
    ]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_job, jobs))
    else:
        results = [_train_job(j) for j in jobs]
    return results


@dataclass
class TrackingReport:
    """Per-joint tracking errors against the desired trajectory."""

    q1: float
    calibrated: JointStats | None
    uncalibrated: JointStats | None
    n_records: int = 0

    def improvement(self) -> np.ndarray:
        """Fractional MAE reduction per joint (calibrated vs uncalibrated)."""
        if self.calibrated is None or self.uncalibrated is None:
            raise DomainError("improvement needs both controller runs")
        uncal = self.uncalibrated.mae
        cal = self.calibrated.mae
        out = np.full(7, np.nan)
        nz = uncal > 1e-12
        out[nz] = 1.0 - cal[nz] / uncal[nz]
        return out


def run_tracking_eval(
    controller: str,
    q1: float,
    plant_params: PlantParams,
    models,
    seed: int = 0,
    n_records: int = 900,
    interp_step: float = DEFAULT_INTERP_STEP_DEG,
    enforce_split: bool = True,
) -> JointStats:
    """Track one random desired trajectory at a fixed translation.

    ``controller`` selects "calibrated" (ensemble compensation) or
    "uncalibrated" (identity). Errors are physical joints against the
    desired trajectory. The translation and trajectory seed must be
    unseen by the models' training set.
    """
    if controller not in ("calibrated", "uncalibrated"):
        raise DomainError(f"unknown controller {controller!r}")
    eval_seed = trajectory_seed(seed + EVAL_SEED_OFFSET, int(round(q1)))
    if controller == "calibrated":
        if not models:
            raise DomainError("calibrated tracking needs trained models")
        if enforce_split and models[0].train_meta:
            assert_split_discipline(models[0].train_meta, q1, eval_seed)
    desired = gen_random_trajectory(
        q1=q1, seed=eval_seed, n_records=n_records, interp_step=interp_step
    )
    if controller == "calibrated":
        state = make_controller(models)
        cmds = run_sequence(state, desired)
    else:
        cmds = desired
    phy = HysteresisPlant(plant_params).run(cmds, reset=True)
    return error_stats(desired, phy)


def compare_tracking(
    q1: float,
    plant_params: PlantParams,
    models,
    seed: int = 0,
    n_records: int = 900,
) -> TrackingReport:
    cal = run_tracking_eval("calibrated", q1, plant_params, models, seed, n_records)
    uncal = run_tracking_eval("uncalibrated", q1, plant_params, models, seed, n_records)
    return TrackingReport(q1=q1, calibrated=cal, uncalibrated=uncal, n_records=n_records)


@dataclass
class PointingReport:
    """Operational-space errors for the box pointing task (mm)."""

    axis_mae: np.ndarray
    axis_sd: np.ndarray
    euclid_mean: float
    euclid_sd: float
    n_points: int
    n_skipped: int

    def as_dict(self) -> dict:
        return {
            "axis_mae_mm": self.axis_mae.tolist(),
            "axis_sd_mm": self.axis_sd.tolist(),
            "euclid_mean_mm": self.euclid_mean,
            "euclid_sd_mm": self.euclid_sd,
            "n_points": self.n_points,
            "n_skipped": self.n_skipped,
        }


# Camera pose used by the synthetic scene (arbitrary but fixed).
CAMERA_POSE = RigidTransform(
    rot_z(np.radians(15.0)), np.array([180.0, -60.0, 120.0])
)


def _sample_box_targets(geom: SegmentParams, rng: np.random.Generator):
    """Five reachable (pose, box-frame) pairs, ordered lowest to highest box.

    Each target pose comes from forward kinematics of a random in-limit
    configuration, which *is* rejection-free workspace membership; the box
    frame is then placed so its top-centre target point coincides with
    that pose at the box's height.
    """
    targets = []
    for height in BOX_HEIGHTS_MM:
        q = rng.uniform(
            [20.0, -25.0, -45.0, -45.0, -45.0, -30.0, 0.0],
            [110.0, 25.0, 45.0, 45.0, 45.0, 30.0, 0.0],
        )
        pose = manipulator_fk(JointConfig.from_array(q), geom)
        yaw = rot_z(rng.uniform(0.0, 2.0 * np.pi))
        box_origin = pose.translation - yaw @ np.array([0.0, 0.0, height])
        base_t_box = RigidTransform(yaw, box_origin)
        targets.append((pose, base_t_box, height))
    return targets


def run_box_pointing(
    n_trials: int,
    controller: str,
    plant_params: PlantParams,
    geom: SegmentParams,
    models=None,
    seed: int = 0,
    marker_noise_sd: float = 0.1,
    interp_step: float = DEFAULT_INTERP_STEP_DEG,
    log=None,
) -> PointingReport:
    """Point at five boxes of increasing height, repeated over random
    placements.

    Per trial: box frames are recovered from synthetic marker clouds
    (RANSAC centres, then the box-frame construction), target joints come
    from inverse kinematics on the estimated target points, and the
    manipulator is driven through the selected controller and the plant,
    sweeping the boxes from lowest to highest. Errors are FK positions of
    the physical joints against the estimated target points. Boxes whose
    IK fails to converge are skipped and counted.
    """
    if controller not in ("calibrated", "uncalibrated"):
        raise DomainError(f"unknown controller {controller!r}")
    state = make_controller(models) if controller == "calibrated" else None
    plant = HysteresisPlant(plant_params)
    errors = []
    skipped = 0
    for trial in range(n_trials):
        rng = np.random.default_rng([seed, trial])
        targets = _sample_box_targets(geom, rng)

        # estimate the camera-to-base frame from the base markers
        centers = {}
        scene = {}
        p_offset = np.asarray(geom.p_offset, dtype=float)
        r0, r1, b0 = base_marker_positions(CAMERA_POSE, p_offset)
        scene.update({"base_r0": r0, "base_r1": r1, "base_b0": b0})
        for j, (_, base_t_box, _) in enumerate(targets):
            cam_t_box = CAMERA_POSE @ base_t_box
            pr, pg, pb = box_marker_positions(cam_t_box)
            scene.update({f"box{j}_r": pr, f"box{j}_g": pg, f"box{j}_b": pb})
        clouds = synthesize_scene_clouds(
            scene, noise_sd=marker_noise_sd, seed=seed * 7919 + trial
        )
        centers = fit_centers(clouds, seed=seed + trial)
        cam_t_base_est = base_frame(
            centers["base_r0"], centers["base_r1"], centers["base_b0"], p_offset
        ).transform

        plant.reset()
        if state is not None:
            controller_reset(state)
        q_current = JointConfig.zero()
        for j, (pose, _, height) in enumerate(targets):
            est = box_frame(
                centers[f"box{j}_r"], centers[f"box{j}_g"], centers[f"box{j}_b"]
            ).transform
            base_t_box_est = cam_t_base_est.inverse() @ est
            target_point = base_t_box_est.apply(np.array([0.0, 0.0, height]))
            target_pose = RigidTransform(pose.rotation, target_point)
            ik = inverse_kinematics(target_pose, geom, q_init=q_current)
            if not ik.converged:
                skipped += 1
                if log is not None:
                    log(f"trial {trial} box {j}: IK did not converge, skipping")
                continue
            path = _interp_joints(q_current.to_array(), ik.q.to_array(), interp_step)
            if controller == "calibrated":
                cmds = run_sequence(state, path, restart=False)
            else:
                cmds = path
            phy = plant.run(cmds, reset=False)
            ee = manipulator_fk(
                JointConfig.from_array(phy[-1]), geom, check_limits=False
            ).translation
            errors.append(ee - target_point)
            q_current = ik.q
    if not errors:
        raise DomainError("box pointing produced no successful targets")
    err = np.asarray(errors)
    dist = np.linalg.norm(err, axis=1)
    return PointingReport(
        axis_mae=np.abs(err).mean(axis=0),
        axis_sd=np.abs(err).std(axis=0),
        euclid_mean=float(dist.mean()),
        euclid_sd=float(dist.std()),
        n_points=int(err.shape[0]),
        n_skipped=skipped,
    )


def _interp_joints(a: np.ndarray, b: np.ndarray, step_deg: float) -> np.ndarray:
    span = float(np.max(np.abs(b - a)))
    n = max(1, int(np.ceil(span / step_deg - 1e-12)))
    return np.linspace(a, b, n + 1)[1:]


@dataclass
class BoxComparison:
    calibrated: PointingReport
    uncalibrated: PointingReport

    def euclid_improvement(self) -> float:
        return 1.0 - self.calibrated.euclid_mean / self.uncalibrated.euclid_mean


def compare_box_pointing(
    n_trials: int,
    plant_params: PlantParams,
    geom: SegmentParams,
    models,
    seed: int = 0,
    marker_noise_sd: float = 0.1,
) -> BoxComparison:
    cal = run_box_pointing(
        n_trials, "calibrated", plant_params, geom, models, seed, marker_noise_sd
    )
    uncal = run_box_pointing(
        n_trials, "uncalibrated", plant_params, geom, models, seed, marker_noise_sd
    )
    return BoxComparison(calibrated=cal, uncalibrated=uncal)
