"""Canonical symbolic score: validated note events with onset/offset seconds,
MIDI pitch, and an optional guitar string index.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


class AnnotationError(ValueError):
    """Raised for malformed plain-text note annotations."""


@dataclass(frozen=True)
class NoteEvent:
    onset: float
    offset: float
    pitch: int
    string: int | None = None

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError(f"negative onset {self.onset}")
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside [0, 127]")
        if self.string is not None and not 0 <= self.string <= 5:
            raise ValueError(f"string {self.string} outside [0, 5]")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass
class NoteSequence:
    """Events sorted by (onset, pitch); duration covers every offset."""

    events: list[NoteEvent] = field(default_factory=list)
    duration: float = 0.0
    dropped: int = 0          # zero/negative-length or duplicate events removed
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


def _sorted(events: list[NoteEvent]) -> list[NoteEvent]:
    return sorted(events, key=lambda e: (e.onset, e.pitch, e.offset))


def validate(seq: NoteSequence) -> NoteSequence:
    """Enforce NoteSequence invariants, dropping events rather than failing.

    Drops zero/negative-length notes and (onset, pitch, string) duplicates;
    the number of removals is reported in ``dropped``.
    """
    kept: list[NoteEvent] = []
    seen: set[tuple[float, int, int | None]] = set()
    dropped = 0
    for ev in _sorted(seq.events):
        if ev.offset <= ev.onset:
            dropped += 1
            continue
        key = (ev.onset, ev.pitch, ev.string)
        if key in seen:
            dropped += 1
            continue
        seen.add(key)
        kept.append(ev)
    duration = max([seq.duration] + [e.offset for e in kept]) if kept else max(seq.duration, 0.0)
    return NoteSequence(events=kept, duration=duration,
                        dropped=seq.dropped + dropped, warnings=list(seq.warnings))


def parse_annotations(text: str) -> NoteSequence:
    """Parse one ``onset offset pitch string`` record per line.

    Raises AnnotationError naming the offending line for non-numeric fields
    or out-of-range string indices.
    """
    events: list[NoteEvent] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 4:
            raise AnnotationError(f"line {lineno}: expected 4 fields, got {len(fields)}")
        try:
            onset, offset = float(fields[0]), float(fields[1])
            pitch, string = int(fields[2]), int(fields[3])
        except ValueError as exc:
            raise AnnotationError(f"line {lineno}: non-numeric field in {line!r}") from exc
        if not 0 <= string <= 5:
            raise AnnotationError(f"line {lineno}: string {string} outside [0, 5]")
        try:
            events.append(NoteEvent(onset, offset, pitch, string))
        except ValueError as exc:
            raise AnnotationError(f"line {lineno}: {exc}") from exc
    duration = max((e.offset for e in events), default=0.0)
    return NoteSequence(events=_sorted(events), duration=duration)


def serialize_annotations(seq: NoteSequence) -> str:
    """Inverse of parse_annotations up to number formatting."""
    lines = [
        f"{e.onset:.9g} {e.offset:.9g} {e.pitch} {e.string if e.string is not None else 0}"
        for e in seq.events
    ]
    return "\n".join(lines) + ("\n" if lines else "")
