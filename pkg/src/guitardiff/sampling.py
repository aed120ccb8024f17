"""Reverse-process sampling: second-order Runge-Kutta ancestral steps down
the noise schedule, with classifier-free guidance for conditioning.

A denoiser here is any callable D(x, sigma, cond) returning the estimate of
the clean data; the numeric core is shape-agnostic so the same code drives
128 x L mel states and low-dimensional oracle checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .diffusion import NoiseSchedule, sigma_steps

DenoiserFn = Callable[[np.ndarray, float, object], np.ndarray]


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 40
    guidance: float = 1.0
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def sigmas(self) -> np.ndarray:
        sched = NoiseSchedule(rho=self.schedule.rho, sigma_min=self.schedule.sigma_min,
                              sigma_max=self.schedule.sigma_max, n_steps=self.steps,
                              sigma_data=self.schedule.sigma_data)
        return sigma_steps(sched)


def ancestral_split(sigma_hi: float, sigma_lo: float) -> tuple[float, float]:
    """Split a step sigma_hi -> sigma_lo into deterministic and noise parts.

    sigma_up = min(sigma_lo, sigma_lo * sqrt(sigma_hi^2 - sigma_lo^2) / sigma_hi)
    and sigma_down = sqrt(sigma_lo^2 - sigma_up^2), so that
    sigma_down^2 + sigma_up^2 = sigma_lo^2.
    """
    if not sigma_hi > sigma_lo >= 0:
        raise ValueError(f"need sigma_hi > sigma_lo >= 0, got {sigma_hi}, {sigma_lo}")
    if sigma_lo == 0.0:
        return 0.0, 0.0
    sigma_up = min(sigma_lo, sigma_lo * np.sqrt(sigma_hi ** 2 - sigma_lo ** 2) / sigma_hi)
    sigma_down = np.sqrt(sigma_lo ** 2 - sigma_up ** 2)
    return float(sigma_down), float(sigma_up)


def rk2_step(x: np.ndarray, sigma_hi: float, sigma_lo: float, denoiser: DenoiserFn,
             cond, z: np.ndarray) -> np.ndarray:
    """One ancestral step from sigma_hi down to sigma_lo.

    Midpoint-free Heun variant: an Euler probe to sigma_down, a second slope
    there, then the averaged update plus sigma_up fresh noise. When
    sigma_down is 0 (terminal step) the Euler probe is the result.
    """
    sigma_down, sigma_up = ancestral_split(sigma_hi, sigma_lo)
    d1 = (x - denoiser(x, sigma_hi, cond)) / sigma_hi
    x_euler = x + (sigma_down - sigma_hi) * d1
    if sigma_down <= 0.0:
        out = x_euler
    else:
        d2 = (x_euler - denoiser(x_euler, sigma_down, cond)) / sigma_down
        out = x + (sigma_down - sigma_hi) * 0.5 * (d1 + d2) + sigma_up * z
    if not np.isfinite(out).all():
        raise FloatingPointError(
            f"non-finite state stepping {sigma_hi:.4g} -> {sigma_lo:.4g}")
    return out


def cfg_denoise(d_cond: np.ndarray, d_uncond: np.ndarray, weight: float) -> np.ndarray:
    """Classifier-free guidance: extrapolate from unconditional to conditional."""
    if weight == 1.0:
        return d_cond
    return d_uncond + weight * (d_cond - d_uncond)


def guided_denoiser(denoiser: DenoiserFn, null_cond, weight: float) -> DenoiserFn:
    """Wrap a conditional denoiser with CFG against a null condition."""
    if weight == 1.0:
        return denoiser

    def guided(x: np.ndarray, sigma: float, cond) -> np.ndarray:
        d_cond = denoiser(x, sigma, cond)
        d_uncond = denoiser(x, sigma, null_cond)
        return cfg_denoise(d_cond, d_uncond, weight)

    return guided


def sample(denoiser: DenoiserFn, cond, cfg: SamplerConfig,
           shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Draw one sample by iterating rk2_step down the schedule.

    The chain starts at sigma_max * eps with eps standard normal and returns
    the state at sigma = 0.
    """
    sigmas = cfg.sigmas()
    x = sigmas[0] * rng.standard_normal(shape)
    for k in range(len(sigmas) - 1):
        z = rng.standard_normal(shape)
        x = rk2_step(x, float(sigmas[k]), float(sigmas[k + 1]), denoiser, cond, z)
    return x
