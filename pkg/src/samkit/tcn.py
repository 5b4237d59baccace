"""Temporal convolutional command estimator, implemented from scratch.

The network is a stack of residual blocks, each holding two dilated causal
1-D convolutions with weight normalization and ReLU; dilation doubles per
block. The block count is tied to the input window length L and kernel
size k by

    num_blocks = ceil(log2((L - 1) / (2k - 2)) + 1)

which makes the receptive field cover the whole window. The last feature
vector of the output sequence is the command estimate for the newest
timestep.

All gradients are derived by hand for this fixed architecture (no autodiff
dependency); ``gradient_check`` validates them against central finite
differences. Training is plain Adam on mean squared error over normalized
channels, with the checkpoint of lowest validation loss retained.

Channels are normalized by fixed per-joint scales (pure scaling, no
offset, so zero input stays zero after normalization; window padding uses
normalized zeros). Translation is divided by its full 125 mm range, which
puts it on a degree-comparable footing with the angle channels.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, TrainingDivergedError
from .kinematics import DEFAULT_Q_LIMITS

CHECKPOINT_VERSION = 1

# Per-channel normalization scales from the default joint limits (max |bound|).
JOINT_SCALES = np.max(np.abs(DEFAULT_Q_LIMITS), axis=1)


def normalize(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float) / JOINT_SCALES


def denormalize(xn: np.ndarray) -> np.ndarray:
    return np.asarray(xn, dtype=float) * JOINT_SCALES


def num_blocks(L: int, k: int) -> int:
    """Residual-block count giving a receptive field of at least L."""
    if L < 2 or k < 2:
        raise DomainError(f"need L >= 2 and k >= 2, got L={L}, k={k}")
    return int(math.ceil(math.log2((L - 1) / (2 * k - 2)) + 1))


def receptive_field(n_blocks: int, k: int, dilation_base: int = 2) -> int:
    span = sum(2 * (k - 1) * dilation_base**i for i in range(n_blocks))
    return 1 + span


@dataclass(frozen=True)
class TcnConfig:
    L: int = 10
    k: int = 3
    dilation_base: int = 2
    channels_in: int = 7
    channels_hidden: int = 64
    channels_out: int = 7
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.L < 2 or self.k < 2:
            raise DomainError("TcnConfig needs L >= 2 and k >= 2")
        if self.dilation_base < 2:
            raise DomainError("dilation_base must be >= 2")

    @property
    def num_blocks(self) -> int:
        return num_blocks(self.L, self.k)

    def block_channels(self):
        """(in, out) channel counts per block; hidden width inside, the
        output width on the last block."""
        n = self.num_blocks
        plan = []
        for i in range(n):
            ci = self.channels_in if i == 0 else self.channels_hidden
            co = self.channels_out if i == n - 1 else self.channels_hidden
            plan.append((ci, co))
        return plan

    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_json(self) -> str:
        return json.dumps(
            {
                "L": self.L, "k": self.k, "dilation_base": self.dilation_base,
                "channels_in": self.channels_in, "channels_hidden": self.channels_hidden,
                "channels_out": self.channels_out, "seed": self.seed, "dtype": self.dtype,
            }
        )

    @classmethod
    def from_json(cls, payload: str) -> "TcnConfig":
        return cls(**json.loads(payload))


def _param_names(cfg: TcnConfig):
    names = []
    for i, (ci, co) in enumerate(cfg.block_channels()):
        for tag in ("v1", "g1", "b1", "v2", "g2", "b2"):
            names.append(f"block{i}_{tag}")
        if ci != co:
            names.append(f"block{i}_proj")
    return names


def init_params(cfg: TcnConfig) -> dict:
    """Seeded weight-norm initialization: g = |v| row norms so the effective
    weight starts equal to the raw direction tensor."""
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.np_dtype()
    params = {}
    for i, (ci, co) in enumerate(cfg.block_channels()):
        for j, cin in (("1", ci), ("2", co)):
            v = rng.normal(0.0, 1.0 / math.sqrt(cin * cfg.k), size=(co, cin, cfg.k))
            params[f"block{i}_v{j}"] = v.astype(dt)
            params[f"block{i}_g{j}"] = np.linalg.norm(
                v.reshape(co, -1), axis=1
            ).astype(dt)
            params[f"block{i}_b{j}"] = np.zeros(co, dtype=dt)
        if ci != co:
            params[f"block{i}_proj"] = rng.normal(
                0.0, 1.0 / math.sqrt(ci), size=(co, ci)
            ).astype(dt)
    return params


@dataclass
class TcnModel:
    config: TcnConfig
    params: dict
    train_meta: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, cfg: TcnConfig) -> "TcnModel":
        return cls(config=cfg, params=init_params(cfg))

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.config.to_json().encode())
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()[:16]

    def copy(self) -> "TcnModel":
        return TcnModel(
            config=self.config,
            params={k: v.copy() for k, v in self.params.items()},
            train_meta=dict(self.train_meta),
        )


def effective_weight(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Weight-norm reparameterization w = g * v / |v| per output filter.

    An all-zero direction tensor maps to an all-zero weight (the g/|v|
    factor is taken as 0), so a zeroed model is the zero map.
    """
    norms = np.linalg.norm(v.reshape(v.shape[0], -1), axis=1)
    scale = np.divide(g, norms, out=np.zeros_like(norms), where=norms > 0)
    return scale[:, None, None] * v


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, d: int):
    """Dilated causal convolution.

    x: (B, L, Cin), w: (Co, Cin, k). Tap j of the kernel reads the input
    shifted left by (k-1-j)*d steps with implicit zero padding, so the
    output at timestep t depends on inputs at t' <= t only. Taps are
    gathered into a (B, L, k*Cin) matrix and applied as one GEMM.
    """
    bsz, L, cin = x.shape
    co, _, k = w.shape
    u = np.empty((bsz, L, k, cin), dtype=x.dtype)
    for j in range(k):
        shift = (k - 1 - j) * d  # how far into the past this tap looks
        if shift == 0:
            u[:, :, j, :] = x
        elif shift >= L:
            u[:, :, j, :] = 0.0
        else:
            u[:, :shift, j, :] = 0.0
            u[:, shift:, j, :] = x[:, : L - shift, :]
    wm = w.transpose(2, 1, 0).reshape(k * cin, co)
    y = u.reshape(bsz * L, k * cin) @ wm
    y += b
    return y.reshape(bsz, L, co), u


def _conv_backward(u: np.ndarray, w: np.ndarray, dy: np.ndarray, d: int, L: int):
    """Gradients of the dilated causal convolution.

    Returns (dw, db, dx) given the cached tap tensor u from the forward
    pass.
    """
    bsz = dy.shape[0]
    co, cin, k = w.shape
    dy2 = dy.reshape(bsz * L, co)
    u2 = u.reshape(bsz * L, k * cin)
    dwm = u2.T @ dy2
    dw = dwm.reshape(k, cin, co).transpose(2, 1, 0)
    db = dy2.sum(axis=0)
    du = (dy2 @ u2_weight_matrix(w).T).reshape(bsz, L, k, cin)
    dx = np.zeros((bsz, L, cin), dtype=dy.dtype)
    for j in range(k):
        shift = (k - 1 - j) * d
        if shift == 0:
            dx += du[:, :, j, :]
        elif shift < L:
            dx[:, : L - shift, :] += du[:, shift:, j, :]
    return dw, db, dx


def u2_weight_matrix(w: np.ndarray) -> np.ndarray:
    co, cin, k = w.shape
    return w.transpose(2, 1, 0).reshape(k * cin, co)


def _weightnorm_backward(v: np.ndarray, g: np.ndarray, dw: np.ndarray):
    co = v.shape[0]
    v2 = v.reshape(co, -1)
    norms = np.linalg.norm(v2, axis=1)
    vhat = v2 / norms[:, None]
    dw2 = dw.reshape(co, -1)
    dg = np.einsum("ij,ij->i", dw2, vhat)
    dv2 = (g / norms)[:, None] * (dw2 - dg[:, None] * vhat)
    return dv2.reshape(v.shape), dg


def forward_norm(model: TcnModel, xn: np.ndarray, want_cache: bool = False):
    """Run the network on a normalized batch (B, L, Cin).

    Returns the output sequence (B, L, Cout) and, when requested, the cache
    needed for the backward pass.
    """
    cfg = model.config
    h = xn
    cache = []
    for i, (ci, co) in enumerate(cfg.block_channels()):
        d = cfg.dilation_base**i
        v1, g1, b1 = (model.params[f"block{i}_{t}"] for t in ("v1", "g1", "b1"))
        v2, g2, b2 = (model.params[f"block{i}_{t}"] for t in ("v2", "g2", "b2"))
        w1 = effective_weight(v1, g1)
        w2 = effective_weight(v2, g2)
        pre1, u1 = _conv_forward(h, w1, b1, d)
        a1 = np.maximum(pre1, 0.0)
        pre2, u2 = _conv_forward(a1, w2, b2, d)
        a2 = np.maximum(pre2, 0.0)
        if ci == co:
            out = a2 + h
            proj = None
        else:
            proj = model.params[f"block{i}_proj"]
            out = a2 + h @ proj.T
        if want_cache:
            cache.append((h, u1, pre1, u2, pre2, w1, w2, proj, d))
        h = out
    return h, cache


def backward_norm(model: TcnModel, cache, dout: np.ndarray) -> dict:
    """Hand-derived backprop through the residual stack; returns gradients
    keyed like the parameter dict."""
    cfg = model.config
    grads = {}
    dh = dout
    for i in range(cfg.num_blocks - 1, -1, -1):
        h, u1, pre1, u2, pre2, w1, w2, proj, d = cache[i]
        L = h.shape[1]
        da2 = dh
        dres = dh
        dpre2 = da2 * (pre2 > 0)
        dw2, db2, da1 = _conv_backward(u2, w2, dpre2, d, L)
        dpre1 = da1 * (pre1 > 0)
        dw1, db1, dx = _conv_backward(u1, w1, dpre1, d, L)
        if proj is None:
            dx = dx + dres
        else:
            b, l, co = dres.shape
            grads[f"block{i}_proj"] = dres.reshape(-1, co).T @ h.reshape(-1, h.shape[2])
            dx = dx + dres @ proj
        v1, g1 = model.params[f"block{i}_v1"], model.params[f"block{i}_g1"]
        v2, g2 = model.params[f"block{i}_v2"], model.params[f"block{i}_g2"]
        grads[f"block{i}_v1"], grads[f"block{i}_g1"] = _weightnorm_backward(v1, g1, dw1)
        grads[f"block{i}_v2"], grads[f"block{i}_g2"] = _weightnorm_backward(v2, g2, dw2)
        grads[f"block{i}_b1"] = db1
        grads[f"block{i}_b2"] = db2
        dh = dx
    return grads


def forward(model: TcnModel, seq: np.ndarray):
    """Estimate the command for the newest timestep of one raw window.

    Args:
        seq: (L, channels_in) raw-unit window (mm / degrees).

    Returns:
        (features, estimate): the denormalized (L, channels_out) output
        sequence and its last row, the command estimate.
    """
    cfg = model.config
    seq = np.asarray(seq, dtype=float)
    if seq.shape != (cfg.L, cfg.channels_in):
        raise DomainError(
            f"window shape {seq.shape} does not match (L={cfg.L}, C={cfg.channels_in})"
        )
    xn = normalize(seq)[None, :, :].astype(cfg.np_dtype())
    yn, _ = forward_norm(model, xn)
    feats = denormalize(yn[0].astype(float))
    return feats, feats[-1].copy()


@dataclass
class WindowSet:
    """Raw-unit training windows: X (M, L, 7) physical-joint histories and
    Y (M, 7) command targets for the final timestep."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 3 or self.y.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise DomainError("WindowSet needs X (M, L, C) and Y (M, C)")

    def __len__(self):
        return self.x.shape[0]


def windows_from_trajectory(phy: np.ndarray, cmd: np.ndarray, L: int) -> WindowSet:
    """Left-zero-padded sliding windows over one trajectory.

    Padding with raw zeros equals padding with normalized zeros because the
    channel normalization is a pure scaling; the same convention is used at
    inference for short histories.
    """
    n = phy.shape[0]
    padded = np.vstack([np.zeros((L - 1, phy.shape[1])), phy])
    x = np.stack([padded[t : t + L] for t in range(n)], axis=0)
    return WindowSet(x=x, y=cmd.copy())


def windows_from_dataset(ds, L: int) -> WindowSet:
    xs, ys = [], []
    for traj in ds.trajectories:
        w = windows_from_trajectory(traj.phy, traj.cmd, L)
        xs.append(w.x)
        ys.append(w.y)
    return WindowSet(x=np.concatenate(xs, axis=0), y=np.concatenate(ys, axis=0))


@dataclass(frozen=True)
class TrainParams:
    lr: float = 0.001
    epochs: int = 1500
    batch: int = 256
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class TrainResult:
    model: TcnModel              # checkpoint with the lowest validation loss
    history: list                # (epoch, train_mse, valid_mse) in normalized units
    best_epoch: int
    best_valid: float
    final_valid: float

    def history_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_mse,valid_mse\n")
        for epoch, tr, va in self.history:
            buf.write(f"{epoch},{tr:.8e},{va:.8e}\n")
        return buf.getvalue()


def _mse_and_grad(model: TcnModel, xn: np.ndarray, yn: np.ndarray):
    out, cache = forward_norm(model, xn, want_cache=True)
    est = out[:, -1, :]
    diff = est - yn
    loss = float(np.mean(diff * diff))
    dout = np.zeros_like(out)
    dout[:, -1, :] = (2.0 / diff.size) * diff
    grads = backward_norm(model, cache, dout)
    return loss, grads


def _valid_loss(model: TcnModel, xn: np.ndarray, yn: np.ndarray, chunk: int = 4096) -> float:
    total = 0.0
    for lo in range(0, xn.shape[0], chunk):
        out, _ = forward_norm(model, xn[lo : lo + chunk])
        diff = out[:, -1, :] - yn[lo : lo + chunk]
        total += float(np.sum(diff * diff))
    return total / (xn.shape[0] * yn.shape[1])


def train(
    dataset_train: WindowSet,
    dataset_valid: WindowSet,
    cfg: TcnConfig,
    hp: TrainParams | None = None,
    train_meta: dict | None = None,
) -> TrainResult:
    """Adam / MSE training; keeps the epoch checkpoint with the lowest
    validation loss. Fully deterministic for a fixed (cfg.seed, data)."""
    hp = hp or TrainParams()
    dt = cfg.np_dtype()
    xtr = normalize(dataset_train.x).astype(dt)
    ytr = normalize(dataset_train.y).astype(dt)
    xva = normalize(dataset_valid.x).astype(dt)
    yva = normalize(dataset_valid.y).astype(dt)

    model = TcnModel.initialize(cfg)
    if train_meta:
        model.train_meta = dict(train_meta)
    names = _param_names(cfg)
    m_state = {n: np.zeros_like(model.params[n]) for n in names}
    v_state = {n: np.zeros_like(model.params[n]) for n in names}
    shuffle_rng = np.random.default_rng([cfg.seed, 0xA11CE])

    best = (np.inf, 0, None)
    history = []
    step = 0
    n = xtr.shape[0]
    for epoch in range(1, hp.epochs + 1):
        order = shuffle_rng.permutation(n)
        running = 0.0
        nb = 0
        for lo in range(0, n, hp.batch):
            idx = order[lo : lo + hp.batch]
            loss, grads = _mse_and_grad(model, xtr[idx], ytr[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"NaN loss at epoch {epoch} batch {nb}: lower the learning "
                    "rate or check the dataset scaling"
                )
            step += 1
            bc1 = 1.0 - hp.adam_beta1**step
            bc2 = 1.0 - hp.adam_beta2**step
            for name in names:
                grad = grads[name]
                m_state[name] = hp.adam_beta1 * m_state[name] + (1 - hp.adam_beta1) * grad
                v_state[name] = hp.adam_beta2 * v_state[name] + (1 - hp.adam_beta2) * grad * grad
                update = (m_state[name] / bc1) / (np.sqrt(v_state[name] / bc2) + hp.adam_eps)
                model.params[name] = model.params[name] - hp.lr * update.astype(dt)
            running += loss
            nb += 1
        valid = _valid_loss(model, xva, yva)
        history.append((epoch, running / max(nb, 1), valid))
        if valid < best[0]:
            best = (valid, epoch, {k: v.copy() for k, v in model.params.items()})

    final_valid = history[-1][2] if history else np.inf
    best_model = TcnModel(config=cfg, params=best[2] or model.params, train_meta=model.train_meta)
    return TrainResult(
        model=best_model,
        history=history,
        best_epoch=best[1],
        best_valid=best[0],
        final_valid=final_valid,
    )


@dataclass
class EvalStats:
    mae: np.ndarray
    sd: np.ndarray
    n: int

    def overall(self) -> tuple:
        return float(self.mae.mean()), float(self.sd.mean())


def evaluate(model: TcnModel, dataset_test: WindowSet, chunk: int = 4096) -> EvalStats:
    """Per-joint MAE and SD of the command estimates, in raw units."""
    cfg = model.config
    xn = normalize(dataset_test.x).astype(cfg.np_dtype())
    ests = []
    for lo in range(0, xn.shape[0], chunk):
        out, _ = forward_norm(model, xn[lo : lo + chunk])
        ests.append(out[:, -1, :])
    est = denormalize(np.concatenate(ests, axis=0).astype(float))
    err = np.abs(est - dataset_test.y)
    return EvalStats(mae=err.mean(axis=0), sd=err.std(axis=0), n=len(dataset_test))


def gradient_check(cfg: TcnConfig, n_samples: int = 3, h: float = 1e-6, seed: int = 0):
    """Max relative error between analytic and central-difference gradients,
    reported per parameter class."""
    cfg = replace(cfg, dtype="float64")
    model = TcnModel.initialize(cfg)
    rng = np.random.default_rng(seed)
    # Randomize biases: zero biases plus zero padding put pre-activations
    # exactly on the ReLU kink, where finite differences disagree with any
    # one-sided subgradient by construction.
    for name in _param_names(cfg):
        if "_b" in name:
            model.params[name] = rng.normal(0.0, 0.2, size=model.params[name].shape)
    xn = rng.normal(0.0, 0.5, size=(n_samples, cfg.L, cfg.channels_in))
    yn = rng.normal(0.0, 0.5, size=(n_samples, cfg.channels_out))

    def loss_only():
        out, _ = forward_norm(model, xn)
        diff = out[:, -1, :] - yn
        return float(np.mean(diff * diff))

    _, grads = _mse_and_grad(model, xn, yn)
    report = {}
    for name in _param_names(cfg):
        p = model.params[name]
        num = np.zeros_like(p)
        flat = p.reshape(-1)
        gnum = num.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp = loss_only()
            flat[idx] = orig - h
            lm = loss_only()
            flat[idx] = orig
            gnum[idx] = (lp - lm) / (2 * h)
        ana = grads[name].reshape(-1)
        denom = np.maximum(np.abs(gnum), np.abs(ana))
        denom = np.where(denom < 1e-8, 1.0, denom)
        rel = np.abs(ana - gnum.reshape(-1)) / denom
        cls = "proj" if name.endswith("proj") else name.rsplit("_", 1)[1][0]
        report[cls] = max(report.get(cls, 0.0), float(rel.max()))
    return report


def save_model(model: TcnModel, path) -> None:
    """Versioned binary checkpoint: config header plus parameter arrays."""
    path = Path(path)
    np.savez(
        path,
        checkpoint_version=np.array([CHECKPOINT_VERSION]),
        config_json=np.frombuffer(model.config.to_json().encode(), dtype=np.uint8),
        train_meta_json=np.frombuffer(
            json.dumps(model.train_meta).encode(), dtype=np.uint8
        ),
        **{f"param_{k}": v for k, v in model.params.items()},
    )


def load_model(path) -> TcnModel:
    path = Path(path)
    with np.load(path if str(path).endswith(".npz") else str(path) + ".npz") as data:
        version = int(data["checkpoint_version"][0])
        if version != CHECKPOINT_VERSION:
            raise DomainError(f"unsupported checkpoint version {version}")
        cfg = TcnConfig.from_json(bytes(data["config_json"]).decode())
        meta = json.loads(bytes(data["train_meta_json"]).decode())
        params = {
            k[len("param_") :]: data[k] for k in data.files if k.startswith("param_")
        }
    return TcnModel(config=cfg, params=params, train_meta=meta)
