"""Variance schedules and the forward/reverse diffusion processes.

Everything here is a pure numeric function over numpy arrays: the noising
marginal x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps, the single ancestral
denoising step, and the full reverse chain driven by a caller-supplied noise
predictor. Images are float32; schedule tables are kept in float64 so the
cumulative alpha products stay accurate out to T=500. Step indices t are
1-based throughout, matching the usual algorithm statements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

SIGMA_BETA = "beta"
SIGMA_BETA_TILDE = "beta_tilde"
_SIGMA_MODES = (SIGMA_BETA, SIGMA_BETA_TILDE)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variance tables: betas, alphas = 1 - betas, and their running product.

    sigma_mode picks the reverse-step variance: "beta" uses sigma_t^2 = beta_t,
    "beta_tilde" uses the posterior variance (1-abar_{t-1})/(1-abar_t) * beta_t
    with the convention abar_0 = 1 (so the t=1 step is noiseless).
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigma_mode: str = SIGMA_BETA

    @property
    def T(self) -> int:
        return len(self.betas)

    def _check_t(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"step index t={t} outside [1, {self.T}]")

    def beta(self, t):
        self._check_t(t)
        return self.betas[np.asarray(t) - 1]

    def alpha(self, t):
        self._check_t(t)
        return self.alphas[np.asarray(t) - 1]

    def alpha_bar(self, t):
        """abar_t, with abar_0 = 1 by convention."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"step index t={t} outside [0, {self.T}]")
        padded = np.concatenate(([1.0], self.alpha_bars))
        return padded[t]


def build_linear_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    sigma_mode: str = SIGMA_BETA,
) -> NoiseSchedule:
    """Linear beta schedule from beta_start to beta_end over T steps."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if sigma_mode not in _SIGMA_MODES:
        raise ValueError(f"sigma_mode must be one of {_SIGMA_MODES}, got {sigma_mode!r}")
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(betas, alphas, alpha_bars, sigma_mode)


def posterior_sigma2(schedule: NoiseSchedule, t: int) -> float:
    """Reverse-step variance sigma_t^2 under the schedule's sigma_mode."""
    schedule._check_t(t)
    beta_t = float(schedule.betas[t - 1])
    if schedule.sigma_mode == SIGMA_BETA:
        return beta_t
    abar_prev = float(schedule.alpha_bar(t - 1))
    abar_t = float(schedule.alpha_bars[t - 1])
    return (1.0 - abar_prev) / (1.0 - abar_t) * beta_t


def _broadcast_coef(c, t, target_ndim):
    """Reshape a per-sample coefficient vector so it broadcasts over image dims."""
    if np.ndim(t) == 0:
        return np.float32(c)
    return np.asarray(c, dtype=np.float32).reshape((-1,) + (1,) * (target_ndim - 1))


def diffuse(
    x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1-abar_t) eps.

    t is a 1-based scalar, or a vector with one step per leading-axis sample.
    """
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    schedule._check_t(t)
    abar = schedule.alpha_bars[np.asarray(t) - 1]
    c_sig = _broadcast_coef(np.sqrt(abar), t, x0.ndim)
    c_noise = _broadcast_coef(np.sqrt(1.0 - abar), t, x0.ndim)
    return (c_sig * x0 + c_noise * eps).astype(np.float32, copy=False)


def denoise_step(
    x_t: np.ndarray,
    t: int,
    eps_pred: np.ndarray,
    z: np.ndarray,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """One ancestral reverse step from x_t to x_{t-1}.

    x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-abar_t) * eps_pred) / sqrt(alpha_t)
              + sigma_t * z
    Callers must pass z = 0 at t = 1; sample_chain enforces that itself.
    """
    if x_t.shape != eps_pred.shape or x_t.shape != z.shape:
        raise ValueError(
            f"shape mismatch: x_t {x_t.shape}, eps_pred {eps_pred.shape}, z {z.shape}"
        )
    schedule._check_t(t)
    alpha_t = float(schedule.alphas[t - 1])
    abar_t = float(schedule.alpha_bars[t - 1])
    c_eps = np.float32((1.0 - alpha_t) / math.sqrt(1.0 - abar_t))
    c_scale = np.float32(1.0 / math.sqrt(alpha_t))
    sigma_t = np.float32(math.sqrt(posterior_sigma2(schedule, t)))
    out = c_scale * (x_t - c_eps * eps_pred) + sigma_t * z
    return out.astype(np.float32, copy=False)


Predictor = Callable[[np.ndarray, int], np.ndarray]


def denoise_from(
    predictor: Predictor,
    schedule: NoiseSchedule,
    x_t: np.ndarray,
    t_start: int,
    rng: np.random.Generator,
    observer: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Run the reverse loop from x_{t_start} down to x_0.

    Draws fresh standard-normal z for every step t > 1 and uses z = 0 at t = 1.
    observer, when given, is called as observer(t-1, x_{t-1}) after each step.
    """
    schedule._check_t(t_start)
    x = x_t
    for t in range(t_start, 0, -1):
        eps_pred = predictor(x, t)
        if eps_pred.shape != x.shape:
            raise ValueError(
                f"predictor returned shape {eps_pred.shape}, expected {x.shape}"
            )
        if t > 1:
            z = rng.standard_normal(size=x.shape, dtype=np.float32)
        else:
            z = np.zeros_like(x)
        x = denoise_step(x, t, eps_pred, z, schedule)
        if observer is not None:
            observer(t - 1, x)
    return x


def sample_chain(
    predictor: Predictor,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    shape: tuple,
    observer: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Full ancestral sampling: x_T ~ N(0, I), then denoise down to x_0.

    shape is (C, H, W) for a single image or (B, C, H, W) for a batch of
    chains advanced in lockstep. Deterministic given the rng's seed.
    """
    x = rng.standard_normal(size=shape, dtype=np.float32)
    if observer is not None:
        observer(schedule.T, x)
    return denoise_from(predictor, schedule, x, schedule.T, rng, observer=observer)
