"""Pipeline configuration: one flat key=value file holding every signal and
model constant, so any divergence from the defaults is visible in one place.

Format: ``key = value`` lines, ``#`` starts a comment, blank lines ignored.
CLI flags override file values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


@dataclass
class PipelineConfig:
    # signal settings
    sample_rate: int = 16000
    fft_size: int = 1024
    hop: int = 320
    window: int = 640
    mel_bins: int = 128
    mel_fmin: float = 20.0
    mel_fmax: float = 8000.0
    log_floor: float = 1e-5
    segment_frames: int = 256

    # diffusion
    sigma_data: float = 0.1
    rho: float = 9.0
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    p_mean: float = -3.0
    p_std: float = 1.0
    steps: int = 40
    guidance: float = 2.0
    mask_ratio: float = 0.5
    resample_u: int = 2

    # denoiser network
    embed_dim: int = 32
    hidden: int = 128
    depth: int = 4

    # training
    lr: float = 1e-4
    batch: int = 16
    cond_dropout: float = 0.1

    # vocoder
    gl_iters: int = 64
    gl_momentum: float = 0.99

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop


def load_config(path: str | Path) -> PipelineConfig:
    """Parse a key=value config file into a PipelineConfig."""
    cfg = PipelineConfig()
    fields = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        current = getattr(cfg, key)
        try:
            if isinstance(current, int):
                setattr(cfg, key, int(value))
            else:
                setattr(cfg, key, float(value))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return cfg


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")
