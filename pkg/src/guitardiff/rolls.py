"""Frame-aligned roll representations of a note sequence.

The guitarroll is a 6 x L integer matrix, one row per string. Cells hold 0
(silence), a sustained MIDI pitch in [40, 84], or 85 marking the frame where
a note starts on that string. The pianoroll baseline is the classic 128 x L
activation matrix (0 off, 1 sustain, 2 onset).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .notes import NoteEvent, NoteSequence, validate

PITCH_MIN = 40
PITCH_MAX = 84
ONSET_TOKEN = 85
SILENCE = 0
N_STRINGS = 6
N_TOKENS = 86  # 0..85
FRAME_RATE = 50.0

ROLL_MAGIC = b"GROL"


@dataclass
class StringAssignment:
    """Open-string pitches, lowest string first (standard tuning)."""

    open_pitches: tuple[int, ...] = (40, 45, 50, 55, 59, 64)

    def __post_init__(self):
        if len(self.open_pitches) != N_STRINGS:
            raise ValueError("expected 6 open-string pitches")
        if any(b <= a for a, b in zip(self.open_pitches, self.open_pitches[1:])):
            raise ValueError("open-string pitches must be strictly increasing")


STANDARD_TUNING = StringAssignment()


@dataclass
class Guitarroll:
    tokens: np.ndarray  # (6, L) integers in {0} | [40, 84] | {85}
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int16)
        if self.tokens.ndim != 2 or self.tokens.shape[0] != N_STRINGS:
            raise ValueError(f"guitarroll must be 6 x L, got {self.tokens.shape}")
        if self.tokens.shape[1] < 1:
            raise ValueError("guitarroll needs at least one frame")
        bad = ~((self.tokens == SILENCE)
                | ((self.tokens >= PITCH_MIN) & (self.tokens <= ONSET_TOKEN)))
        if bad.any():
            raise ValueError(f"tokens outside {{0}} | [40, 85]: {np.unique(self.tokens[bad])}")

    @property
    def length(self) -> int:
        return self.tokens.shape[1]


@dataclass
class Pianoroll:
    tokens: np.ndarray  # (128, L) in {0, 1, 2}
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int16)
        if self.tokens.ndim != 2 or self.tokens.shape[0] != 128:
            raise ValueError(f"pianoroll must be 128 x L, got {self.tokens.shape}")


def assign_strings(seq: NoteSequence, tuning: StringAssignment = STANDARD_TUNING) -> NoteSequence:
    """Assign each note the highest feasible free string; drop what cannot fit.

    A string s is feasible when tuning.open_pitches[s] <= pitch and no other
    assigned note occupies s anywhere over the note's duration. Out-of-range
    pitches and notes with no feasible free string are dropped and counted.
    """
    ordered = sorted(seq.events, key=lambda e: (e.onset, -e.pitch, e.offset))
    busy_until = [-1.0] * N_STRINGS  # offset of the last note placed on each string
    assigned: list[NoteEvent] = []
    dropped = 0
    for ev in ordered:
        if not PITCH_MIN <= ev.pitch <= PITCH_MAX:
            dropped += 1
            continue
        placed = False
        for s in range(N_STRINGS - 1, -1, -1):
            if tuning.open_pitches[s] <= ev.pitch and busy_until[s] <= ev.onset:
                assigned.append(NoteEvent(ev.onset, ev.offset, ev.pitch, s))
                busy_until[s] = ev.offset
                placed = True
                break
        if not placed:
            dropped += 1
    return validate(NoteSequence(events=assigned, duration=seq.duration,
                                 dropped=seq.dropped + dropped, warnings=list(seq.warnings)))


def _frame_span(ev: NoteEvent, rate: float, length: int) -> tuple[int, int]:
    """Onset/offset frames, floor-quantized, minimum 2 frames, clipped to L."""
    f0 = int(np.floor(ev.onset * rate))
    f1 = int(np.floor(ev.offset * rate))
    f1 = max(f1, f0 + 2)
    return min(f0, length), min(f1, length)


def encode_guitarroll(seq: NoteSequence, length: int, frame_rate: float = FRAME_RATE) -> Guitarroll:
    """Encode a string-assigned sequence as a 6 x length token matrix.

    Each note writes token 85 at its onset frame and its pitch over the
    remaining frames before the offset frame. Later onsets overwrite: a new
    note on a string truncates whatever was sounding there.
    """
    tokens = np.zeros((N_STRINGS, length), dtype=np.int16)
    for ev in sorted(seq.events, key=lambda e: (e.onset, e.pitch)):
        if ev.string is None:
            raise ValueError(f"note at {ev.onset:.3f}s has no string; run assign_strings first")
        if not PITCH_MIN <= ev.pitch <= PITCH_MAX:
            raise ValueError(f"pitch {ev.pitch} not representable in [40, 84]")
        f0, f1 = _frame_span(ev, frame_rate, length)
        if f0 >= length:
            continue
        tokens[ev.string, f0] = ONSET_TOKEN
        tokens[ev.string, f0 + 1:f1] = ev.pitch
    return Guitarroll(tokens, frame_rate)


def decode_guitarroll(roll: Guitarroll) -> NoteSequence:
    """Recover notes from maximal runs of onset token + constant pitch.

    An onset token not followed by a pitch frame is skipped and counted in
    the returned sequence's ``dropped`` field.
    """
    rate = roll.frame_rate
    events: list[NoteEvent] = []
    malformed = 0
    for s in range(N_STRINGS):
        row = roll.tokens[s]
        t = 0
        while t < roll.length:
            if row[t] != ONSET_TOKEN:
                t += 1
                continue
            start = t
            t += 1
            if t >= roll.length or not PITCH_MIN <= row[t] <= PITCH_MAX:
                malformed += 1
                continue
            pitch = int(row[t])
            while t < roll.length and row[t] == pitch:
                t += 1
            events.append(NoteEvent(start / rate, t / rate, pitch, s))
    seq = NoteSequence(events=sorted(events, key=lambda e: (e.onset, e.pitch)),
                       duration=roll.length / rate, dropped=malformed)
    return seq


def encode_pianoroll(seq: NoteSequence, length: int, frame_rate: float = FRAME_RATE) -> Pianoroll:
    """128 x length activation matrix: onset frame 2, sustain frames 1."""
    tokens = np.zeros((128, length), dtype=np.int16)
    for ev in sorted(seq.events, key=lambda e: (e.onset, e.pitch)):
        f0, f1 = _frame_span(ev, frame_rate, length)
        if f0 >= length:
            continue
        tokens[ev.pitch, f0] = 2
        tokens[ev.pitch, f0 + 1:f1] = 1
    return Pianoroll(tokens, frame_rate)


def save_roll(roll: Guitarroll, path) -> None:
    """Flat binary: magic, rows, L, frame_rate header + row-major int16 tokens."""
    header = ROLL_MAGIC + struct.pack("<IId", roll.tokens.shape[0], roll.length, roll.frame_rate)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(roll.tokens.astype("<i2").tobytes(order="C"))


def load_roll(path) -> Guitarroll:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != ROLL_MAGIC:
        raise ValueError(f"{path}: not a roll file (bad magic)")
    rows, length, rate = struct.unpack("<IId", data[4:20])
    tokens = np.frombuffer(data[20:], dtype="<i2").reshape(rows, length)
    return Guitarroll(tokens.copy(), rate)


def dump_roll(roll: Guitarroll) -> str:
    """Debug text dump, one row per string, highest string on top."""
    lines = []
    for s in range(N_STRINGS - 1, -1, -1):
        cells = " ".join(f"{int(v):2d}" if v else " ." for v in roll.tokens[s])
        lines.append(f"string {s}: {cells}")
    return "\n".join(lines)
