"""Synthetic history-dependent joint-space plant.

Maps commanded joints to "physical" joints with the hysteresis signatures
observed on the real instrument: wide dead zones from cable/sheath
friction (a backlash/play operator), smooth loop rounding (a Bouc-Wen
state per joint), a one-sided pretension bias on the extensible-segment
pitch joint, error amplification with translation (structural stiffness
drops as the active length grows), and drift injected into the forceps
yaw through proximal-segment coupling.

The plant is deterministic given its command history when observation
noise is off, and rate independent: holding a command steady changes
nothing. Axial translation q1 passes through exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError
from .kinematics import JointConfig

# Joints whose deviation is amplified by translation: pitch/yaw of the
# extensible segment fully, segment-2 pitch at half weight.
TRANS_WEIGHT = np.array([0.0, 0.0, 1.0, 1.0, 0.5, 0.0, 0.0])


def _default_coupling() -> np.ndarray:
    c = np.zeros((7, 7))
    # forceps yaw drifts against proximal bending (row q6)
    c[5, 2] = -0.66
    c[5, 3] = -0.18
    c[5, 4] = -0.15
    return c


@dataclass(frozen=True)
class PlantParams:
    """Calibrated plant coefficients; angles in degrees, q1 in mm.

    ``deadzone_halfwidth`` and ``backlash_halfwidth`` shape the play
    operator per joint; ``bw_*`` are the Bouc-Wen loop-rounding shape
    parameters; ``bias_gain`` is the one-sided pretension offset on q3;
    ``trans_gain_slope`` is the per-mm growth of g(q1) = 1 + slope * q1;
    ``coupling`` injects a linear mix of the pre-coupling physical joints
    (chiefly into q6); ``noise_sd`` adds Gaussian observation noise.
    """

    deadzone_halfwidth: tuple = (0.0, 0.5, 1.0, 1.0, 1.0, 0.3, 0.0)
    backlash_halfwidth: tuple = (0.0, 8.0, 9.5, 10.0, 9.0, 1.2, 0.0)
    bw_alpha: tuple = (0.0, 0.3, 0.6, 0.5, 0.4, 0.1, 0.0)
    bw_beta: float = 0.15
    bw_gamma: float = 0.075
    bw_n: float = 1.5
    bias_gain: float = 15.0
    trans_gain_slope: float = 0.034
    band_gain_slope: float = 0.008
    coupling: tuple = field(default_factory=lambda: tuple(map(tuple, _default_coupling())))
    noise_sd: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        for name in ("deadzone_halfwidth", "backlash_halfwidth", "bw_alpha"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (7,):
                raise DomainError(f"{name} must have 7 entries")
            if np.any(arr < 0):
                raise DomainError(f"{name} entries must be non-negative")
        if self.trans_gain_slope < 0 or self.band_gain_slope < 0:
            raise DomainError("translation slopes must be non-negative (g(q1) >= 1)")
        if np.asarray(self.coupling, dtype=float).shape != (7, 7):
            raise DomainError("coupling must be a 7x7 matrix")
        if self.bw_n < 1.0:
            raise DomainError("bw_n must be >= 1")

    def arrays(self):
        return (
            np.asarray(self.deadzone_halfwidth, dtype=float),
            np.asarray(self.backlash_halfwidth, dtype=float),
            np.asarray(self.bw_alpha, dtype=float),
            np.asarray(self.coupling, dtype=float),
        )

    def content_hash(self) -> str:
        payload = json.dumps(
            {
                "deadzone": list(self.deadzone_halfwidth),
                "backlash": list(self.backlash_halfwidth),
                "bw_alpha": list(self.bw_alpha),
                "bw_beta": self.bw_beta,
                "bw_gamma": self.bw_gamma,
                "bw_n": self.bw_n,
                "bias_gain": self.bias_gain,
                "trans_gain_slope": self.trans_gain_slope,
                "band_gain_slope": self.band_gain_slope,
                "coupling": [list(r) for r in self.coupling],
                "noise_sd": self.noise_sd,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class PlantState:
    """Mutable per-instance state; ``reset`` semantics are exact."""

    z: np.ndarray = field(default_factory=lambda: np.zeros(7))
    play: np.ndarray = field(default_factory=lambda: np.zeros(7))
    last_cmd: np.ndarray = field(default_factory=lambda: np.zeros(7))
    last_phy: np.ndarray = field(default_factory=lambda: np.zeros(7))
    rng: np.random.Generator | None = None

    def copy(self) -> "PlantState":
        return PlantState(
            z=self.z.copy(),
            play=self.play.copy(),
            last_cmd=self.last_cmd.copy(),
            last_phy=self.last_phy.copy(),
            rng=None if self.rng is None else np.random.default_rng(),
        )

    def to_json(self) -> str:
        state = None
        if self.rng is not None:
            state = self.rng.bit_generator.state
        return json.dumps(
            {
                "z": self.z.tolist(),
                "play": self.play.tolist(),
                "last_cmd": self.last_cmd.tolist(),
                "last_phy": self.last_phy.tolist(),
                "rng_state": state,
            }
        )

    @classmethod
    def from_json(cls, payload: str) -> "PlantState":
        data = json.loads(payload)
        rng = None
        if data.get("rng_state") is not None:
            rng = np.random.default_rng()
            rng.bit_generator.state = data["rng_state"]
        return cls(
            z=np.asarray(data["z"], dtype=float),
            play=np.asarray(data["play"], dtype=float),
            last_cmd=np.asarray(data["last_cmd"], dtype=float),
            last_phy=np.asarray(data["last_phy"], dtype=float),
            rng=rng,
        )


def initial_state(params: PlantParams) -> PlantState:
    rng = np.random.default_rng(params.noise_seed) if params.noise_sd > 0 else None
    return PlantState(rng=rng)


_BW_SUBSTEP_DEG = 1.5


def _step_arrays(state: PlantState, u: np.ndarray, params: PlantParams) -> np.ndarray:
    dz_w, play_w, bw_a, coupling = params.arrays()

    # Translation softens the structure: the lost-motion band and the
    # Bouc-Wen amplitude grow with q1 on the translation-sensitive joints
    # (the band at a gentler slope than the pretension bias).
    gain = 1.0 + params.trans_gain_slope * u[0] * TRANS_WEIGHT
    band_gain = 1.0 + params.band_gain_slope * u[0] * TRANS_WEIGHT
    du = u - state.last_cmd

    # static deadzone, then play (backlash): flats appear on every reversal
    ud = np.sign(u) * np.maximum(np.abs(u) - dz_w * band_gain, 0.0)
    band = play_w * band_gain
    state.play = np.minimum(np.maximum(state.play, ud - band), ud + band)

    # Bouc-Wen internal state: smooth, rate-independent loop rounding.
    # Integrated in substeps along the command path (the update assumes
    # small increments) and clamped to the saturation amplitude so that
    # arbitrary command jumps cannot blow the state up.
    z_sat = np.where(
        bw_a > 0, (bw_a / (params.bw_beta + params.bw_gamma)) ** (1.0 / params.bw_n), 0.0
    )
    n_sub = max(1, int(np.ceil(np.max(np.abs(du)) / _BW_SUBSTEP_DEG)))
    dsub = du / n_sub
    z = state.z
    for _ in range(n_sub):
        zn = np.abs(z) ** (params.bw_n - 1.0) * z
        znn = np.abs(z) ** params.bw_n
        z = z + bw_a * dsub - params.bw_beta * np.abs(dsub) * zn - params.bw_gamma * dsub * znn
        z = np.clip(z, -z_sat, z_sat)
    state.z = z

    # z is positive while the command rises; subtracting it deepens the
    # friction-type lag (same loop orientation as the play operator).
    pre = state.play - gain * state.z
    g3 = 1.0 + params.trans_gain_slope * u[0]
    pre[2] += params.bias_gain * g3

    phy = pre + coupling @ pre
    phy[0] = u[0]  # axial translation is geared, no cable hysteresis
    if params.noise_sd > 0 and state.rng is not None:
        phy[1:] += state.rng.normal(0.0, params.noise_sd, size=6)

    state.last_cmd = u.copy()
    state.last_phy = phy.copy()
    return phy


def plant_step(state: PlantState, q_cmd: JointConfig, params: PlantParams):
    """Advance the plant one command step.

    Returns the updated state and the physical joint configuration. The
    input state is not modified.
    """
    new_state = state.copy()
    if state.rng is not None:
        new_state.rng = np.random.default_rng()
        new_state.rng.bit_generator.state = state.rng.bit_generator.state
    phy = _step_arrays(new_state, q_cmd.to_array(), params)
    return new_state, JointConfig.from_array(phy)


class HysteresisPlant:
    """Stateful wrapper for sequential stepping of one plant instance."""

    def __init__(self, params: PlantParams | None = None):
        self.params = params or PlantParams()
        self.state = initial_state(self.params)

    def reset(self) -> None:
        self.state = initial_state(self.params)

    def step(self, q_cmd) -> np.ndarray:
        u = q_cmd.to_array() if isinstance(q_cmd, JointConfig) else np.asarray(q_cmd, dtype=float)
        return _step_arrays(self.state, u.copy(), self.params)

    def run(self, cmds: np.ndarray, reset: bool = True) -> np.ndarray:
        """Drive a (N, 7) command sequence; returns (N, 7) physical joints."""
        cmds = np.asarray(cmds, dtype=float)
        if reset:
            self.reset()
        out = np.empty_like(cmds)
        for i in range(cmds.shape[0]):
            out[i] = _step_arrays(self.state, cmds[i].copy(), self.params)
        return out


def identity_params() -> PlantParams:
    """A hysteresis-free plant: q_phy == q_cmd exactly."""
    zeros7 = (0.0,) * 7
    return PlantParams(
        deadzone_halfwidth=zeros7,
        backlash_halfwidth=zeros7,
        bw_alpha=zeros7,
        bias_gain=0.0,
        trans_gain_slope=0.0,
        band_gain_slope=0.0,
        coupling=tuple(map(tuple, np.zeros((7, 7)))),
        noise_sd=0.0,
    )


def noisy_params(base: PlantParams | None = None, noise_sd: float = 0.3, seed: int = 0) -> PlantParams:
    """Observation-noise profile for robustness experiments."""
    base = base or PlantParams()
    return replace(base, noise_sd=noise_sd, noise_seed=seed)
