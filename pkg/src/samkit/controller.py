"""Real-time hysteresis compensation controller.

An ensemble of three trained command estimators receives the last L
desired joint vectors (zero padded while the history is shorter than L)
and outputs a calibrated command: the mean of the three estimates. The
uncalibrated baseline passes desired joints straight through.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ModelMismatchError
from .kinematics import DEFAULT_Q_LIMITS, JointConfig
from .tcn import TcnModel, denormalize, forward_norm, normalize


@dataclass
class LatencyStats:
    samples_us: list = field(default_factory=list)
    max_keep: int = 20000

    def add(self, us: float) -> None:
        self.samples_us.append(us)
        if len(self.samples_us) > self.max_keep:
            del self.samples_us[: len(self.samples_us) - self.max_keep]

    def percentiles(self):
        if not self.samples_us:
            raise DomainError("no latency samples recorded")
        arr = np.asarray(self.samples_us)
        return float(np.percentile(arr, 50)), float(np.percentile(arr, 99))


@dataclass
class ControllerState:
    """Ensemble plus the rolling window of desired joint vectors."""

    models: tuple
    history: np.ndarray          # (L, 7) raw units, newest row last
    count: int = 0               # desired vectors seen since reset
    latency_stats: LatencyStats = field(default_factory=LatencyStats)

    @property
    def window_length(self) -> int:
        return self.models[0].config.L


def make_controller(models) -> ControllerState:
    """Validate and order the ensemble.

    All members must share an identical network configuration; members are
    sorted by content fingerprint so the averaging order (and therefore the
    floating-point result) is independent of argument order.
    """
    models = list(models)
    if not models:
        raise ModelMismatchError("controller needs at least one model")
    cfg0 = models[0].config
    for m in models[1:]:
        if m.config != cfg0:
            raise ModelMismatchError(
                f"ensemble config mismatch: {m.config} vs {cfg0}"
            )
    ordered = tuple(sorted(models, key=lambda m: m.fingerprint()))
    L = cfg0.L
    return ControllerState(models=ordered, history=np.zeros((L, cfg0.channels_in)))


def reset(state: ControllerState) -> None:
    state.history[:] = 0.0
    state.count = 0


def compensate(state: ControllerState, q_desired) -> JointConfig:
    """Push a desired joint vector and return the calibrated command.

    While fewer than L vectors have been seen, the older window slots hold
    zeros (the normalized-zero padding convention shared with training).
    """
    q = q_desired.to_array() if isinstance(q_desired, JointConfig) else np.asarray(q_desired, dtype=float)
    state.history[:-1] = state.history[1:]
    state.history[-1] = q
    state.count += 1

    dt = state.models[0].config.np_dtype()
    xn = normalize(state.history)[None, :, :].astype(dt)
    total = None
    for model in state.models:
        out, _ = forward_norm(model, xn)
        est = out[0, -1, :]
        total = est if total is None else total + est
    mean = denormalize((total / len(state.models)).astype(float))
    return JointConfig.from_array(mean)


def uncalibrated_pass(q_desired) -> JointConfig:
    """Baseline controller: desired joints forwarded unchanged."""
    if isinstance(q_desired, JointConfig):
        return JointConfig.from_array(q_desired.to_array())
    return JointConfig.from_array(np.asarray(q_desired, dtype=float))


def run_sequence(state: ControllerState, desired: np.ndarray, restart: bool = True) -> np.ndarray:
    """Compensate a whole (N, 7) desired trajectory; returns (N, 7) commands."""
    desired = np.asarray(desired, dtype=float)
    if restart:
        reset(state)
    out = np.empty_like(desired)
    for i in range(desired.shape[0]):
        out[i] = compensate(state, desired[i]).to_array()
    return out


def latency_probe(state: ControllerState, n: int, seed: int = 0, limits=DEFAULT_Q_LIMITS):
    """Time n compensate() calls on a representative random desired stream.

    Returns (p50, p99) in microseconds and records the samples in the
    controller's running statistics.
    """
    if n <= 0:
        raise DomainError("latency probe needs n > 0 calls")
    rng = np.random.default_rng(seed)
    lim = np.asarray(limits, dtype=float)
    stream = rng.uniform(lim[:, 0], lim[:, 1], size=(n, 7))
    reset(state)
    # warm the code paths so the probe measures steady-state behaviour
    for i in range(min(50, n)):
        compensate(state, stream[i])
    reset(state)
    times = np.empty(n)
    for i in range(n):
        t0 = time.perf_counter_ns()
        compensate(state, stream[i])
        times[i] = (time.perf_counter_ns() - t0) / 1000.0
    for t in times:
        state.latency_stats.add(float(t))
    return float(np.percentile(times, 50)), float(np.percentile(times, 99))
