"""Adam training of the noise predictor on (free, condition) point pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..diffusion import DiffusionSchedule
from ..rng import make_rng
from .network import DenoiserConfig, Params, backward, compute_dtype, forward, noise_loss

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 8
    epochs: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # arithmetic of the forward/backward pass; Adam state stays float64
    precision: str = "float64"
    # "cosine" anneals the step size from learning_rate to zero over the run
    lr_schedule: str = "constant"

    def __post_init__(self) -> None:
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def noised_batch(x0_free: np.ndarray, t: np.ndarray, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    ab = sched.alpha_bar[np.asarray(t) - 1][:, None, None]
    return np.sqrt(ab) * x0_free + np.sqrt(1.0 - ab) * eps


def loss_and_grad(
    params: Params,
    cfg: DenoiserConfig,
    x0_free: np.ndarray,
    c0: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    sched: DiffusionSchedule,
) -> tuple[float, Params]:
    """Mean noise-prediction loss over the batch and its exact parameter gradient."""
    dt = compute_dtype(params)
    xt = noised_batch(x0_free, t, eps, sched).astype(dt, copy=False)
    eps = eps.astype(dt, copy=False)
    out, cache = forward(params, cfg, xt, c0, t)
    loss, d_out = noise_loss(eps, out)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    return loss, backward(params, cfg, cache, d_out)


def loss_gradient(
    params: Params,
    cfg: DenoiserConfig,
    batch: tuple[np.ndarray, np.ndarray],
    sched: DiffusionSchedule,
    rng: np.random.Generator,
) -> tuple[float, Params]:
    """Draw a step and noise per cloud, then return loss and gradient."""
    x0_free, c0 = batch
    if len(x0_free) == 0:
        raise ValueError("empty batch")
    t = rng.integers(1, sched.T + 1, size=len(x0_free))
    eps = rng.standard_normal(x0_free.shape)
    return loss_and_grad(params, cfg, x0_free, c0, t, eps, sched)


class Adam:
    def __init__(self, params: Params, config: TrainConfig):
        self.config = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0

    def update(self, params: Params, grads: Params, lr: float | None = None) -> Params:
        c = self.config
        lr = c.learning_rate if lr is None else lr
        self.step += 1
        bc1 = 1.0 - c.beta1**self.step
        bc2 = 1.0 - c.beta2**self.step
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            out[k] = p - lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)
        return out


def step_size(config: TrainConfig, done: int, total: int) -> float:
    """Learning rate for the step after ``done`` completed steps."""
    if config.lr_schedule == "constant" or total == 0:
        return config.learning_rate
    return 0.5 * config.learning_rate * (1.0 + np.cos(np.pi * done / total))


def fit(
    params: Params,
    cfg: DenoiserConfig,
    dataset: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    sched: DiffusionSchedule,
    seed: int = 0,
    on_epoch: Optional[Callable[[int, float, Params], None]] = None,
) -> tuple[Params, list[float]]:
    """Train for ``config.epochs`` epochs; returns new parameters and per-epoch mean loss.

    ``dataset`` is a pair of stacked arrays ``(free (D, M, 3), condition (D, N, 3))``.
    """
    x0_free, c0 = dataset
    if len(x0_free) == 0:
        raise ValueError("dataset is empty")
    rng = make_rng(seed)
    opt = Adam(params, config)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    work = np.dtype(config.precision)
    if work != np.float64:
        x0_free, c0 = x0_free.astype(work), c0.astype(work)
    history: list[float] = []
    steps_per_epoch = -(-len(x0_free) // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    for epoch in range(config.epochs):
        order = rng.permutation(len(x0_free))
        losses = []
        for start in range(0, len(order), config.batch_size):
            sel = order[start : start + config.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    step_params = params if work == np.float64 else {k: v.astype(work) for k, v in params.items()}
                    loss, grads = loss_gradient(step_params, cfg, (x0_free[sel], c0[sel]), sched, rng)
            except FloatingPointError as exc:
                raise TrainingDiverged(epoch, float("nan")) from exc
            params = opt.update(params, grads, step_size(config, opt.step, total_steps))
            losses.append(loss * len(sel))
        mean = float(np.sum(losses) / len(order))
        if not np.isfinite(mean):
            raise TrainingDiverged(epoch, mean)
        history.append(mean)
        log.debug("epoch %d loss %.5f", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean, params)
    return params, history
