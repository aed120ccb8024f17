"""Diffusion outpainting and segment chaining for long-form generation.

A segment's first half is pinned to known data: at every reverse step the
known region is re-noised to the current level and merged over the sampled
state, with optional inner resampling passes to harmonize the halves. Long
rolls are synthesized window by window, each new window outpainting from the
second half of the previous one (outpainting ratio 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .sampling import DenoiserFn, SamplerConfig, rk2_step, sample


@dataclass(frozen=True)
class OutpaintConfig:
    resample_u: int = 2
    mask_ratio: float = 0.5
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.resample_u < 1:
            raise ValueError("resampling count must be >= 1")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must lie in (0, 1)")


def renoise(x: np.ndarray, sigma_hi: float, sigma_lo: float, eps: np.ndarray) -> np.ndarray:
    """Step a state back up one noise level: x + sqrt(s_hi^2 - s_lo^2) * eps."""
    if sigma_hi <= sigma_lo:
        raise ValueError(f"renoise needs sigma_hi > sigma_lo, got {sigma_hi}, {sigma_lo}")
    beta = np.sqrt(sigma_hi ** 2 - sigma_lo ** 2)
    return x + beta * eps


def outpaint(m_known: np.ndarray, cond, denoiser: DenoiserFn, cfg: OutpaintConfig,
             rng: np.random.Generator) -> np.ndarray:
    """Generate a full segment whose masked prefix equals m_known exactly.

    The mask covers the first mask_ratio fraction of the last axis. Reverse
    steps run down the schedule; within each step the body executes
    resample_u times, re-noising back up between passes so the free region
    can adapt to the pinned one.
    """
    n_known = m_known.shape[-1]
    total = round(n_known / cfg.mask_ratio)
    if round(total * cfg.mask_ratio) != n_known:
        raise ValueError(f"known length {n_known} incompatible with ratio {cfg.mask_ratio}")
    shape = m_known.shape[:-1] + (total,)
    mask = np.zeros(total, dtype=bool)
    mask[:n_known] = True
    m0 = np.zeros(shape)
    m0[..., mask] = m_known

    sigmas = cfg.sampler.sigmas()
    n = len(sigmas) - 1
    x = sigmas[0] * rng.standard_normal(shape)
    for k in range(n):
        sigma_hi, sigma_lo = float(sigmas[k]), float(sigmas[k + 1])
        for u in range(cfg.resample_u):
            if sigma_lo > 0.0:
                known = m0 + sigma_lo * rng.standard_normal(shape)
            else:
                known = m0
            z = rng.standard_normal(shape)
            stepped = rk2_step(x, sigma_hi, sigma_lo, denoiser, cond, z)
            merged = np.where(mask, known, stepped)
            if u < cfg.resample_u - 1 and sigma_lo > 0.0:
                x = renoise(merged, sigma_hi, sigma_lo, rng.standard_normal(shape))
            else:
                x = merged
    return x


def synthesize_chain(roll_tokens: np.ndarray, denoiser: DenoiserFn, cfg: OutpaintConfig,
                     segment_frames: int, rng: np.random.Generator,
                     progress: Callable[[str], None] | None = None,
                     dump: Callable[[int, np.ndarray], None] | None = None,
                     state_rows: int = 128) -> np.ndarray:
    """Synthesize a mel sequence covering an arbitrarily long condition roll.

    Stage 1 is a plain conditional sample of the first window; stage k >= 2
    outpaints window [(k-1)*L/2, (k+1)*L/2) from the second half of the
    running output. The trailing partial window sees a zero-padded condition
    and the output is truncated to the roll length.
    """
    total = roll_tokens.shape[-1]
    half = round(segment_frames * cfg.mask_ratio)
    if half * 2 != segment_frames:
        raise ValueError("segment_frames must be even at outpainting ratio 0.5")

    def cond_slice(start: int) -> np.ndarray:
        window = roll_tokens[:, start:start + segment_frames]
        if window.shape[1] < segment_frames:
            pad = segment_frames - window.shape[1]
            window = np.pad(window, ((0, 0), (0, pad)))
        return window

    if progress:
        progress(f"stage 1/?: sampling frames [0, {segment_frames})")
    out = sample(denoiser, cond_slice(0), cfg.sampler, (state_rows, segment_frames), rng)
    if dump:
        dump(1, out)
    if total <= segment_frames:
        return out[:, :total]

    n_stages = 1 + -(-(total - segment_frames) // half)
    for stage in range(2, n_stages + 1):
        start = (stage - 1) * half
        if progress:
            progress(f"stage {stage}/{n_stages}: outpainting frames "
                     f"[{start + half}, {start + segment_frames})")
        known = out[:, start:start + half]
        segment = outpaint(known, cond_slice(start), denoiser, cfg, rng)
        out = np.concatenate([out, segment[:, half:]], axis=1)
        if dump:
            dump(stage, segment)
    return out[:, :total]
