"""Variance-exploding diffusion core: power-law noise schedule, denoiser
preconditioning, forward perturbation, the training objective, and an
analytic Gaussian denoiser used as a verification oracle.

The denoiser is parameterized as D(x; sigma, c) = c_skip * x
+ c_out * F(c_in * x, c_noise, c), with the scaling schedule chosen so that
F sees unit-variance inputs and targets at every noise level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

SIGMA_DATA = 0.1
P_MEAN = -3.0
P_STD = 1.0

# F(x_in, c_noise, cond) -> same-shaped array
NetFn = Callable[[np.ndarray, float, object], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    rho: float = 9.0
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    n_steps: int = 40
    sigma_data: float = SIGMA_DATA

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.n_steps < 1:
            raise ValueError("need at least one step")


def sigma_steps(sched: NoiseSchedule) -> np.ndarray:
    """Descending noise levels, length n_steps + 1, ending at exactly 0.

    sigma_i = (smax^(1/rho) + i/(N-1) * (smin^(1/rho) - smax^(1/rho)))^rho
    for i = 0..N-1; the appended terminal level is 0. N = 1 degenerates to
    [sigma_max, 0].
    """
    n, rho = sched.n_steps, sched.rho
    if n == 1:
        return np.array([sched.sigma_max, 0.0])
    lo = sched.sigma_min ** (1.0 / rho)
    hi = sched.sigma_max ** (1.0 / rho)
    i = np.arange(n, dtype=np.float64)
    sig = (hi + i / (n - 1) * (lo - hi)) ** rho
    sig[0] = sched.sigma_max
    sig[-1] = sched.sigma_min
    return np.append(sig, 0.0)


@dataclass(frozen=True)
class PreconditionCoeffs:
    c_skip: float
    c_out: float
    c_in: float
    c_noise: float


def precondition(sigma: float, sigma_data: float = SIGMA_DATA) -> PreconditionCoeffs:
    """Scaling schedule for noise level sigma."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    s2 = sigma * sigma + sigma_data * sigma_data
    return PreconditionCoeffs(
        c_skip=sigma_data * sigma_data / s2,
        c_out=sigma * sigma_data / np.sqrt(s2),
        c_in=1.0 / np.sqrt(s2),
        c_noise=np.log(sigma) / 4.0,
    )


def perturb(m0: np.ndarray, sigma: float, eps: np.ndarray) -> np.ndarray:
    """Forward kernel: m0 + sigma * eps (identity signal scaling)."""
    if eps.shape != m0.shape:
        raise ValueError(f"noise shape {eps.shape} != data shape {m0.shape}")
    return m0 + sigma * eps


def denoise(net: NetFn, x: np.ndarray, sigma: float, cond=None,
            sigma_data: float = SIGMA_DATA) -> np.ndarray:
    """Preconditioned denoised estimate of the clean data."""
    c = precondition(sigma, sigma_data)
    out = net(c.c_in * x, c.c_noise, cond)
    return c.c_skip * x + c.c_out * out


@dataclass(frozen=True)
class TrainSigmaSampler:
    """Log-normal training noise levels: sigma = exp(p_mean + p_std * z)."""

    p_mean: float = P_MEAN
    p_std: float = P_STD

    def draw(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return np.exp(self.p_mean + self.p_std * rng.standard_normal(n))


def training_loss(net: NetFn, m0_batch: np.ndarray, cond_batch, rng: np.random.Generator,
                  sigma_data: float = SIGMA_DATA,
                  sigma_sampler: TrainSigmaSampler = TrainSigmaSampler(),
                  ) -> tuple[float, np.ndarray]:
    """Denoising score-matching loss over a batch, plus the per-example sigmas.

    Per example: draw sigma log-normally, noise the data, and regress the
    network output onto (m0 - c_skip * x) / c_out. The mean squared residual
    over all cells is the loss; its optimum matches the weighted objective of
    the underlying score-matching formulation.
    """
    n = m0_batch.shape[0]
    sigmas = sigma_sampler.draw(rng, n)
    total = 0.0
    cells = 0
    for i in range(n):
        m0 = m0_batch[i]
        sigma = float(sigmas[i])
        c = precondition(sigma, sigma_data)
        x = perturb(m0, sigma, rng.standard_normal(m0.shape))
        cond = cond_batch[i] if cond_batch is not None else None
        pred = net(c.c_in * x, c.c_noise, cond)
        target = (m0 - c.c_skip * x) / c.c_out
        total += float(((pred - target) ** 2).sum())
        cells += m0.size
    return total / cells, sigmas


def gaussian_oracle_denoiser(mu: np.ndarray, sigma_data: float = SIGMA_DATA) -> NetFn:
    """Exact network for data distributed N(mu, sigma_data^2 I).

    The implied denoiser D(x; sigma) = (sigma_data^2 x + sigma^2 mu)
    / (sigma^2 + sigma_data^2) is the true posterior mean, so samplers run
    against this oracle can be checked against the known target distribution.
    """
    mu = np.asarray(mu, dtype=np.float64)

    def net(x_in: np.ndarray, c_noise: float, cond=None) -> np.ndarray:
        sigma = float(np.exp(4.0 * c_noise))
        c = precondition(sigma, sigma_data)
        x = x_in / c.c_in
        posterior = (sigma_data ** 2 * x + sigma ** 2 * mu) / (sigma ** 2 + sigma_data ** 2)
        return (posterior - c.c_skip * x) / c.c_out

    return net
