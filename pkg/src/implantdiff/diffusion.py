"""Conditional DDPM over point clouds whose condition block stays fixed.

Only the free points are noised and denoised; the condition points are handed
to the noise predictor unchanged at every step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng import make_rng
from .surface.cloud import PointCloud

# (x_t_free, c0, t) -> predicted noise for the free block
Denoiser = Callable[[np.ndarray, np.ndarray, int], np.ndarray]

PAPER_T = 1000
PAPER_BETA_START = 1e-4
PAPER_BETA_END = 0.02


@dataclass(frozen=True)
class DiffusionSchedule:
    """Tables indexed by step ``t`` in ``1..T`` through the accessor methods."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside 1..{self.T}")

    def beta_at(self, t: int) -> float:
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        return float(self.alpha_bar[t - 1])

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": float(self.beta[0]), "beta_end": float(self.beta[-1])}


def make_schedule(
    T: int = PAPER_T, beta_start: float = PAPER_BETA_START, beta_end: float = PAPER_BETA_END
) -> DiffusionSchedule:
    """Linear variance schedule with beta_1 = beta_start and beta_T = beta_end."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1 and beta_start != beta_end:
        raise ValueError("a one-step schedule needs beta_start == beta_end")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    return DiffusionSchedule(beta, alpha, np.cumprod(alpha))


def toy_schedule(T: int) -> DiffusionSchedule:
    """Linear schedule with both endpoints scaled by 1000/T.

    Keeps the total noise injected by a short chain comparable to the
    1000-step default so x_T is still close to a standard normal.
    """
    f = PAPER_T / T
    return make_schedule(T, PAPER_BETA_START * f, min(PAPER_BETA_END * f, 0.999))


def forward_sample(x0_free: np.ndarray, t: int, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    sched.check_step(t)
    x0_free = np.asarray(x0_free, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0_free.shape:
        raise ValueError(f"noise shape {eps.shape} does not match points {x0_free.shape}")
    ab = sched.alpha_bar_at(t)
    return np.sqrt(ab) * x0_free + np.sqrt(1.0 - ab) * eps


def training_loss(
    denoiser: Denoiser, x0: PointCloud, t: int, eps: np.ndarray, sched: DiffusionSchedule
) -> float:
    """Mean over free points of the squared noise-prediction error."""
    x0_free = x0.free
    if len(x0_free) == 0:
        raise ValueError("cloud has no free points")
    xt = forward_sample(x0_free, t, eps, sched)
    eps_hat = denoiser(xt, x0.condition, t)
    return float(np.mean(np.sum((eps - eps_hat) ** 2, axis=-1)))


def reverse_step(
    xt_free: np.ndarray,
    c0: np.ndarray,
    t: int,
    z: np.ndarray,
    denoiser: Denoiser,
    sched: DiffusionSchedule,
) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1} with reverse variance beta_t."""
    sched.check_step(t)
    if t == 1 and np.any(z != 0):
        raise ValueError("the final step (t = 1) must be noise-free")
    a, ab, b = sched.alpha_at(t), sched.alpha_bar_at(t), sched.beta_at(t)
    eps_hat = denoiser(xt_free, c0, t)
    return (xt_free - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a) + np.sqrt(b) * z


def complete(
    c0: np.ndarray,
    m: int,
    denoiser: Denoiser,
    sched: DiffusionSchedule,
    rng_seed: int,
) -> PointCloud:
    """Generate ``m`` free points conditioned on ``c0``.

    The returned cloud holds ``c0`` first (``split = len(c0)``) followed by the
    generated points.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    cond = np.array(c0, dtype=np.float64).reshape(-1, 3)
    cond.setflags(write=False)
    rng = make_rng(rng_seed)
    x = rng.standard_normal((m, 3))
    for t in range(sched.T, 0, -1):
        z = rng.standard_normal((m, 3)) if t > 1 else np.zeros((m, 3))
        x = reverse_step(x, cond, t, z, denoiser, sched)
    return PointCloud(np.vstack([cond, x]), split=len(cond))
