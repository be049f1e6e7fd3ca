"""Minibatch training with Adam, and latent refitting for auto-decoders."""

from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass

import numpy as np

from .._rng import substream
from .model import ModelConfigError, ToyModel, objective


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 512
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    latent_reg: float = 1e-4
    latent_iters: int = 800
    latent_lr: float = 1e-2

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.latent_iters < 0:
            raise ValueError("epochs/latent_iters must be >= 0 and batch_size > 0")
        if self.lr < 0 or self.latent_lr < 0:
            raise ValueError("step sizes must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """First/second-moment adaptive step on a flat vector (in-place)."""

    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        x -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainResult:
    model: ToyModel
    trace: list
    seconds: float


def param_hash(params: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(params, dtype="<f8").tobytes()).hexdigest()


def _stack(model: ToyModel, datasets):
    if not isinstance(datasets, (list, tuple)):
        datasets = [datasets]
    if len(datasets) != model.config.n_shapes:
        raise ModelConfigError(f"model has {model.config.n_shapes} shape slot(s), got {len(datasets)} dataset(s)")
    pts, tgt, sid = [], [], []
    for s, ds in enumerate(datasets):
        kind = ds.provenance.get("kind")
        if kind is not None and kind.split(":")[0] != model.kind.name:
            raise ModelConfigError(f"dataset kind {kind} does not match model head {model.kind}")
        p, t = ds.training_view()
        pts.append(p)
        tgt.append(t)
        sid.append(np.full(len(p), s, dtype=np.int64))
    return np.concatenate(pts), np.concatenate(tgt), np.concatenate(sid)


def train(model: ToyModel, datasets, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Train a copy of ``model``; dataset ``i`` supplies shape slot ``i``.

    Masked points are dropped before batching.  The epoch loss is the mean of
    the minibatch objectives.  Raises :class:`TrainingDivergedError` on a
    non-finite loss.
    """
    P, T, S = _stack(model, datasets)
    out = model.copy()
    params = out.params
    opt = Adam(params.size, config.lr, config.beta1, config.beta2, config.eps)
    rng = substream(config.seed, "train-shuffle")
    reg = config.latent_reg if model.archetype == "AutoDecoder" else 0.0
    trace = []
    t0 = time.perf_counter()
    n = len(P)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for s in range(0, n, config.batch_size):
            b = order[s : s + config.batch_size]
            val, grad, _ = objective(out, P[b], T[b], S[b], params=params, latent_reg=reg)
            if not np.isfinite(val) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            opt.step(params, grad)
            total += val
            batches += 1
        trace.append(total / max(batches, 1))
    out.provenance = dict(model.provenance, train=config.to_dict(), n_points=int(n))
    return TrainResult(out, trace, time.perf_counter() - t0)


def fit_latent(model: ToyModel, dataset, config: TrainConfig = TrainConfig()) -> np.ndarray:
    """Optimize a fresh latent vector against ``dataset`` with the decoder frozen.

    The model is never modified.  Starts from ``N(0, feature_init_std^2)``
    drawn from the config seed and runs ``latent_iters`` Adam steps on
    random minibatches.
    """
    if model.archetype != "AutoDecoder":
        raise ModelConfigError("fit_latent applies to AutoDecoder models only")
    P, T = dataset.training_view()
    rng = substream(config.seed, "fit-latent")
    z = rng.normal(scale=model.config.feature_init_std, size=model.config.feature_dim)
    opt = Adam(z.size, config.latent_lr, config.beta1, config.beta2, config.eps)
    for it in range(config.latent_iters):
        b = rng.choice(len(P), size=min(config.batch_size, len(P)), replace=False)
        val, _, dz = objective(model, P[b], T[b], 0, latent=z, latent_reg=config.latent_reg)
        if not np.isfinite(val):
            raise TrainingDivergedError(f"non-finite loss at latent iteration {it}")
        opt.step(z, dz)
    return z
