"""Audio <-> mel spectrogram transforms and a Griffin-Lim vocoder.

Signal settings: 16 kHz audio, 640-sample Hann frames zero-padded to a
1024-point FFT, hop 320, 128 mel bins over 20 Hz - 8 kHz, natural log with a
1e-5 floor. The log-mel is affinely normalized so the training corpus has
standard deviation sigma_data = 0.1.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

SAMPLE_RATE = 16000
FFT_SIZE = 1024
HOP = 320
WINDOW = 640
MEL_BINS = 128
MEL_FMIN = 20.0
MEL_FMAX = 8000.0
LOG_FLOOR = 1e-5
SIGMA_DATA = 0.1


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {self.samples.shape}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class NormStats:
    """Affine normalization x -> (x - mean) * scale applied to log-mel bins."""

    mean: float = 0.0
    scale: float = 1.0


IDENTITY_NORM = NormStats()


@dataclass
class MelSpectrogram:
    bins: np.ndarray  # (128, L)
    norm: NormStats = IDENTITY_NORM

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64)
        if self.bins.ndim != 2 or self.bins.shape[0] != MEL_BINS:
            raise ValueError(f"mel must be {MEL_BINS} x L, got {self.bins.shape}")
        if not np.isfinite(self.bins).all():
            raise ValueError("mel contains non-finite values")

    @property
    def length(self) -> int:
        return self.bins.shape[1]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(n_mels: int = MEL_BINS, fmin: float = MEL_FMIN,
                       fmax: float = MEL_FMAX) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(sample_rate: int = SAMPLE_RATE, fft_size: int = FFT_SIZE,
                   n_mels: int = MEL_BINS, fmin: float = MEL_FMIN,
                   fmax: float = MEL_FMAX) -> np.ndarray:
    """Area-normalized triangular filterbank, shape (n_mels, fft_size//2 + 1)."""
    freqs = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, len(freqs)))
    for j in range(n_mels):
        lo, center, hi = edges[j], edges[j + 1], edges[j + 2]
        up = (freqs - lo) / (center - lo)
        down = (hi - freqs) / (hi - center)
        fb[j] = np.maximum(0.0, np.minimum(up, down)) * (2.0 / (hi - lo))
    return fb


_FILTERBANK = mel_filterbank()
_HANN = get_window("hann", WINDOW, fftbins=True)


def num_frames(n_samples: int, hop: int = HOP) -> int:
    """Frame count under centered analysis; 81920 samples -> 256 frames."""
    return -(-n_samples // hop)


def _frame(x: np.ndarray, n_frames: int) -> np.ndarray:
    """Stack n_frames windows of length WINDOW hopping by HOP."""
    idx = HOP * np.arange(n_frames)[:, None] + np.arange(WINDOW)[None, :]
    return x[idx]


def stft_magnitude(w: Waveform) -> np.ndarray:
    """Centered, reflect-padded magnitude STFT, shape (513, L)."""
    x = w.samples
    if len(x) == 0:
        raise ValueError("empty waveform")
    if not np.isfinite(x).all():
        raise ValueError("waveform contains non-finite samples")
    n_fr = num_frames(len(x))
    pad_left = WINDOW // 2
    pad_right = max(0, (n_fr - 1) * HOP + WINDOW - pad_left - len(x))
    mode = "reflect" if len(x) > max(pad_left, pad_right) else "constant"
    padded = np.pad(x, (pad_left, pad_right), mode=mode)
    frames = _frame(padded, n_fr) * _HANN
    return np.abs(np.fft.rfft(frames, n=FFT_SIZE, axis=1)).T


def mel_forward(w: Waveform, stats: NormStats | None = None) -> MelSpectrogram:
    """Waveform -> (optionally normalized) log-mel spectrogram.

    5.12 s at 16 kHz yields exactly 256 frames. Pass corpus NormStats to get
    the normalized representation the diffusion model trains on; without
    stats the raw log-mel is returned with an identity norm.
    """
    if w.sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {w.sample_rate}")
    mel = _FILTERBANK @ stft_magnitude(w)
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    m = MelSpectrogram(logmel, IDENTITY_NORM)
    return normalize(m, stats) if stats is not None else m


def compute_norm_stats(mels: list[MelSpectrogram], sigma_data: float = SIGMA_DATA) -> NormStats:
    """Corpus mean/scale such that normalized cells have std sigma_data."""
    cells = np.concatenate([m.bins.ravel() for m in mels])
    mean = float(cells.mean())
    std = float(cells.std())
    if std == 0.0:
        raise ValueError("corpus is constant; cannot normalize")
    return NormStats(mean=mean, scale=sigma_data / std)


def normalize(m: MelSpectrogram, stats: NormStats) -> MelSpectrogram:
    if m.norm != IDENTITY_NORM:
        raise ValueError("mel is already normalized")
    return MelSpectrogram((m.bins - stats.mean) * stats.scale, stats)


def denormalize(m: MelSpectrogram) -> MelSpectrogram:
    return MelSpectrogram(m.bins / m.norm.scale + m.norm.mean, IDENTITY_NORM)


def _istft(spec: np.ndarray) -> np.ndarray:
    """Windowed overlap-add synthesis; output length HOP*(L-1) + WINDOW."""
    n_fr = spec.shape[1]
    frames = np.fft.irfft(spec.T, n=FFT_SIZE, axis=1)[:, :WINDOW] * _HANN
    out_len = HOP * (n_fr - 1) + WINDOW
    out = np.zeros(out_len)
    wsum = np.zeros(out_len)
    for k in range(n_fr):
        out[k * HOP:k * HOP + WINDOW] += frames[k]
        wsum[k * HOP:k * HOP + WINDOW] += _HANN ** 2
    # floor keeps the barely-covered edge samples attenuated instead of blown up
    return out / np.maximum(wsum, 1e-3)


def _stft_plain(x: np.ndarray, n_fr: int) -> np.ndarray:
    """Uncentered analysis matching _istft framing; the Griffin-Lim pair."""
    frames = _frame(x, n_fr) * _HANN
    return np.fft.rfft(frames, n=FFT_SIZE, axis=1).T


def mel_to_linear(mel_mag: np.ndarray, iters: int = 50) -> np.ndarray:
    """Non-negative pseudo-inverse of the filterbank via multiplicative updates."""
    fb = _FILTERBANK
    weight = fb.sum(axis=0)
    s = (fb.T @ mel_mag) / np.maximum(weight, 1e-12)[:, None]
    gram = fb.T @ fb
    target = fb.T @ mel_mag
    for _ in range(iters):
        s *= target / np.maximum(gram @ s, 1e-12)
    return s


def griffin_lim(m: MelSpectrogram, iters: int = 64, momentum: float = 0.99,
                error_trace: list[float] | None = None) -> Waveform:
    """Recover audio from a mel spectrogram via phase retrieval.

    Denormalizes, inverts the log and the filterbank, then runs momentum
    Griffin-Lim. iters=0 returns the zero-phase inverse STFT. Appends the
    spectral-convergence error per iteration to error_trace when given.
    """
    raw = denormalize(m) if m.norm != IDENTITY_NORM else m
    mag = mel_to_linear(np.exp(raw.bins))
    n_fr = mag.shape[1]
    if iters == 0:
        return Waveform(_istft(mag.astype(np.complex128)))
    # zero phase is a stationary point for any tone at a multiple of the frame
    # rate; a fixed-seed random init breaks that symmetry and stays deterministic
    rng = np.random.default_rng(0x6C1F)
    angles = np.exp(2j * np.pi * rng.random(mag.shape))
    rebuilt = None
    for _ in range(iters):
        prev = rebuilt
        inverse = _istft(mag * angles)
        rebuilt = _stft_plain(inverse, n_fr)
        if error_trace is not None:
            err = np.linalg.norm(np.abs(rebuilt) - mag) / max(np.linalg.norm(mag), 1e-12)
            error_trace.append(float(err))
        if prev is not None:
            rebuilt = rebuilt - (momentum / (1.0 + momentum)) * prev
        angles = rebuilt / np.maximum(np.abs(rebuilt), 1e-12)
    return Waveform(_istft(mag * angles))


def wav_write(w: Waveform, path) -> None:
    """16-bit PCM mono RIFF/WAVE; samples clamped to [-1, 1)."""
    clipped = np.clip(w.samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(clipped * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def wav_read(path) -> Waveform:
    """Read 16-bit PCM mono 16 kHz WAV; anything else is an error."""
    try:
        fh = wave.open(str(path), "rb")
    except (wave.Error, EOFError) as exc:
        raise ValueError(f"{path}: malformed RIFF/WAVE: {exc}") from exc
    with fh:
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: mono required, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: 16-bit PCM required, got {8 * fh.getsampwidth()}-bit")
        if fh.getframerate() != SAMPLE_RATE:
            raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz, got {fh.getframerate()} Hz")
        pcm = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0)


def save_mel(m: MelSpectrogram, path) -> None:
    """Binary: rows, L (uint32) + mean, scale (float64) + row-major float32."""
    header = struct.pack("<IIdd", m.bins.shape[0], m.length, m.norm.mean, m.norm.scale)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.bins.astype("<f4").tobytes(order="C"))


def load_mel(path) -> MelSpectrogram:
    with open(path, "rb") as fh:
        data = fh.read()
    rows, length, mean, scale = struct.unpack("<IIdd", data[:24])
    bins = np.frombuffer(data[24:], dtype="<f4").reshape(rows, length)
    return MelSpectrogram(bins.astype(np.float64), NormStats(mean, scale))
