"""Deterministic synthetic paired dataset: seeded random scores rendered to
plucked-string audio and encoded as (guitarroll, normalized mel) pairs.

The renderer is a Karplus-Strong string: a noise-seeded delay line with an
averaging feedback loop, which is pitch-verifiable and fully reproducible
from (pitch, duration, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .dsp import (MelSpectrogram, NormStats, SAMPLE_RATE, Waveform,
                  compute_norm_stats, load_mel, mel_forward, normalize, save_mel)
from .notes import NoteEvent, NoteSequence
from .rolls import (FRAME_RATE, Guitarroll, PITCH_MAX, PITCH_MIN,
                    STANDARD_TUNING, assign_strings, encode_guitarroll,
                    load_roll, save_roll)

KS_DECAY = 0.996
FADE_SECONDS = 0.010


def midi_to_hz(pitch: float) -> float:
    return 440.0 * 2.0 ** ((pitch - 69) / 12.0)


def karplus_strong(pitch: int, duration: float, seed: int,
                   sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Plucked-string render of one note at 16 kHz.

    Delay line of length round(rate / f0) seeded with uniform noise, then
    y[n] = decay * (y[n - p] + y[n - p - 1]) / 2, linearly faded over the
    final 10 ms.
    """
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    if not PITCH_MIN <= pitch <= PITCH_MAX:
        raise ValueError(f"pitch {pitch} outside [{PITCH_MIN}, {PITCH_MAX}]")
    n = round(duration * sample_rate)
    p = round(sample_rate / midi_to_hz(pitch))
    rng = np.random.default_rng(seed)
    burst = np.zeros(n)
    burst[:min(p, n)] = rng.uniform(-1.0, 1.0, min(p, n))
    # y[n] = x[n] + (decay/2) * (y[n-p] + y[n-p-1]) as an IIR filter
    a = np.zeros(p + 2)
    a[0] = 1.0
    a[p] = a[p + 1] = -KS_DECAY / 2.0
    y = lfilter([1.0], a, burst)
    fade = min(n, round(FADE_SECONDS * sample_rate))
    if fade > 0:
        y[n - fade:] *= np.linspace(1.0, 0.0, fade)
    return Waveform(y, sample_rate)


@dataclass(frozen=True)
class ScoreParams:
    rate_per_voice: float = 2.0        # mean notes per second per voice
    duration_lo: float = 0.1
    duration_hi: float = 1.0
    min_frames: int = 2


def random_score(seed: int, length: float, polyphony: int,
                 params: ScoreParams = ScoreParams()) -> NoteSequence:
    """Seeded random score: per-voice sequential notes, strings assigned.

    Onsets advance by exponential gaps (mean 1/rate) from the previous
    offset, durations are uniform, pitches uniform over [40, 84]; notes
    shorter than min_frames after quantization are redrawn.
    """
    if not 1 <= polyphony <= 6:
        raise ValueError(f"polyphony {polyphony} outside [1, 6]")
    rng = np.random.default_rng(seed)
    events: list[NoteEvent] = []
    min_dur = params.min_frames / FRAME_RATE
    for _ in range(polyphony):
        t = float(rng.exponential(1.0 / params.rate_per_voice))
        while t < length:
            dur = float(rng.uniform(params.duration_lo, params.duration_hi))
            while dur < min_dur:
                dur = float(rng.uniform(params.duration_lo, params.duration_hi))
            pitch = int(rng.integers(PITCH_MIN, PITCH_MAX + 1))
            offset = min(t + dur, length)
            if offset - t >= min_dur:
                events.append(NoteEvent(t, offset, pitch))
            t = offset + float(rng.exponential(1.0 / params.rate_per_voice))
    seq = NoteSequence(events=sorted(events, key=lambda e: (e.onset, e.pitch)),
                       duration=length)
    return assign_strings(seq, STANDARD_TUNING)


def render_audio(seq: NoteSequence, length: float, seed: int = 0) -> Waveform:
    """Mix per-note plucked-string renders at their onsets, peak 0.5."""
    n = round(length * SAMPLE_RATE)
    mix = np.zeros(n)
    for i, ev in enumerate(seq.events):
        note = karplus_strong(ev.pitch, ev.duration, seed=np.random.SeedSequence(
            [seed, i]).generate_state(1)[0])
        start = round(ev.onset * SAMPLE_RATE)
        stop = min(n, start + len(note.samples))
        if start < n:
            mix[start:stop] += note.samples[:stop - start]
    peak = np.abs(mix).max()
    if peak > 0:
        mix *= 0.5 / peak
    return Waveform(mix)


def render_pair(seq: NoteSequence, length_frames: int, seed: int = 0,
                stats: NormStats | None = None) -> tuple[Guitarroll, MelSpectrogram]:
    """Frame-aligned (guitarroll, mel) pair for a string-assigned score."""
    seconds = length_frames / FRAME_RATE
    audio = render_audio(seq, seconds, seed=seed)
    mel = mel_forward(audio, stats)
    roll = encode_guitarroll(seq, length_frames)
    assert mel.length == length_frames, (mel.length, length_frames)
    return roll, mel


@dataclass
class SegmentSpec:
    index: int
    seed: int
    split: str
    duration: float
    note_count: int


def gen_dataset(n_segments: int, seed: int, out_dir, length_frames: int = 256,
                polyphony: int = 6, sigma_data: float = 0.1) -> list[SegmentSpec]:
    """Write n (roll, mel) pairs plus manifest.csv under out_dir/{train,val}.

    Normalization stats are computed over the training split and recorded in
    every mel file; the first 90% of segment indices are train, the rest
    validation. Fully reproducible from (n_segments, seed).
    """
    if n_segments < 1:
        raise ValueError("need at least one segment")
    out = Path(out_dir)
    for split in ("train", "val"):
        (out / split).mkdir(parents=True, exist_ok=True)
    seconds = length_frames / FRAME_RATE
    n_train = max(1, int(round(n_segments * 0.9)))

    specs: list[SegmentSpec] = []
    pairs: list[tuple[Guitarroll, MelSpectrogram]] = []
    for i in range(n_segments):
        seg_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        poly = 1 + i % polyphony if polyphony > 1 else 1
        seq = random_score(seg_seed, seconds, poly)
        roll, mel = render_pair(seq, length_frames, seed=seg_seed)
        split = "train" if i < n_train else "val"
        specs.append(SegmentSpec(i, seg_seed, split, seconds, len(seq)))
        pairs.append((roll, mel))

    stats = compute_norm_stats(
        [mel for spec, (_, mel) in zip(specs, pairs) if spec.split == "train"],
        sigma_data)
    for spec, (roll, mel) in zip(specs, pairs):
        stem = out / spec.split / f"{spec.index:06d}"
        save_roll(roll, stem.with_suffix(".roll"))
        save_mel(normalize(mel, stats), stem.with_suffix(".mel"))

    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "split", "seed", "duration", "notes"])
        for spec in specs:
            writer.writerow([spec.index, spec.split, spec.seed,
                             spec.duration, spec.note_count])
    return specs


def load_dataset(data_dir, split: str = "train") -> tuple[list[tuple[np.ndarray, np.ndarray]], NormStats]:
    """Read (mel bins, roll tokens) pairs of one split plus the norm stats."""
    folder = Path(data_dir) / split
    if not folder.is_dir():
        raise FileNotFoundError(f"no {split!r} split under {data_dir}")
    pairs = []
    stats = None
    for mel_path in sorted(folder.glob("*.mel")):
        mel = load_mel(mel_path)
        roll = load_roll(mel_path.with_suffix(".roll"))
        pairs.append((mel.bins, roll.tokens))
        stats = mel.norm
    if not pairs:
        raise FileNotFoundError(f"no .mel files under {folder}")
    return pairs, NormStats(stats.mean, stats.scale)
