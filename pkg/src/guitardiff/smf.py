"""Byte-level standard MIDI file (format 0/1) parser.

Resolves note-on/note-off pairs to seconds through the merged tempo map.
Velocity is parsed and discarded; meta and channel events other than notes
and tempo changes are skipped chunk-accurately.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

from .notes import NoteEvent, NoteSequence, validate

DEFAULT_TEMPO_US = 500_000  # microseconds per quarter note


class SmfParseError(ValueError):
    """Malformed MIDI data; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class _Reader:
    """Bounds-checked cursor over the raw bytes."""

    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base  # offset of data[0] in the whole file, for messages

    @property
    def offset(self) -> int:
        return self.base + self.pos

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def u8(self) -> int:
        if self.pos >= len(self.data):
            raise SmfParseError("unexpected end of data", self.offset)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.remaining() < n:
            raise SmfParseError(f"expected {n} bytes, found {self.remaining()}", self.offset)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def vlq(self) -> int:
        """Variable-length quantity, at most 4 bytes per the SMF spec."""
        value = 0
        for i in range(4):
            b = self.u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise SmfParseError("variable-length quantity longer than 4 bytes", self.offset)


@dataclass
class _RawNote:
    on_tick: int
    off_tick: int
    pitch: int


class TempoMap:
    """Piecewise-constant tempo over ticks; converts tick positions to seconds."""

    def __init__(self, changes: list[tuple[int, int]], ticks_per_quarter: int):
        # changes: (tick, us_per_quarter), deduplicated, tick 0 always present
        merged: dict[int, int] = {0: DEFAULT_TEMPO_US}
        for tick, tempo in sorted(changes):
            merged[tick] = tempo
        self.points = sorted(merged.items())
        self.tpq = ticks_per_quarter
        # prefix seconds at each change point
        self._prefix: list[float] = []
        total = 0.0
        for i, (tick, _) in enumerate(self.points):
            if i > 0:
                prev_tick, prev_tempo = self.points[i - 1]
                total += (tick - prev_tick) * prev_tempo / (self.tpq * 1e6)
            self._prefix.append(total)

    def seconds(self, tick: int) -> float:
        idx = bisect_right(self.points, (tick, float("inf"))) - 1
        base_tick, tempo = self.points[idx]
        return self._prefix[idx] + (tick - base_tick) * tempo / (self.tpq * 1e6)


def _parse_track(reader: _Reader, notes: list[_RawNote],
                 tempo_changes: list[tuple[int, int]], warnings: list[str]) -> None:
    tick = 0
    running_status: int | None = None
    open_notes: dict[tuple[int, int], list[int]] = {}  # (channel, pitch) -> onset ticks

    def close(channel: int, pitch: int, off_tick: int) -> None:
        stack = open_notes.get((channel, pitch))
        if stack:
            notes.append(_RawNote(stack.pop(0), off_tick, pitch))

    while reader.remaining() > 0:
        tick += reader.vlq()
        status = reader.u8()
        if status < 0x80:
            if running_status is None:
                raise SmfParseError(f"data byte {status:#x} with no running status", reader.offset - 1)
            reader.pos -= 1
            status = running_status

        if status == 0xFF:  # meta event
            meta_type = reader.u8()
            length = reader.vlq()
            payload = reader.take(length)
            running_status = None
            if meta_type == 0x51:
                if length != 3:
                    raise SmfParseError(f"tempo meta event of length {length}", reader.offset)
                tempo_changes.append((tick, int.from_bytes(payload, "big")))
            elif meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):  # sysex
            length = reader.vlq()
            reader.take(length)
            running_status = None
        elif status >= 0xF0:
            raise SmfParseError(f"unsupported system event {status:#x}", reader.offset - 1)
        else:
            running_status = status
            kind = status & 0xF0
            channel = status & 0x0F
            if kind in (0x80, 0x90, 0xA0, 0xB0, 0xE0):
                d1, d2 = reader.u8(), reader.u8()
                if kind == 0x90 and d2 > 0:
                    open_notes.setdefault((channel, d1), []).append(tick)
                elif kind == 0x80 or (kind == 0x90 and d2 == 0):
                    close(channel, d1, tick)
            elif kind in (0xC0, 0xD0):
                reader.u8()
            else:
                raise SmfParseError(f"unknown status byte {status:#x}", reader.offset - 1)

    for (channel, pitch), stack in sorted(open_notes.items()):
        for on_tick in stack:
            if tick > on_tick:
                notes.append(_RawNote(on_tick, tick, pitch))
                warnings.append(
                    f"dangling note-on (channel {channel}, pitch {pitch}) closed at track end")


def parse_smf(data: bytes) -> NoteSequence:
    """Parse SMF format 0/1 bytes into a validated NoteSequence.

    Tick positions are converted to seconds through the merged tempo map
    (piecewise integration over tempo changes from all tracks). Note-on with
    velocity 0 is treated as note-off; dangling note-ons close at the end of
    their track with a warning. The string field is left unset.
    """
    reader = _Reader(data)
    if reader.take(4) != b"MThd":
        raise SmfParseError("missing MThd header", 0)
    header_len = reader.u32()
    if header_len < 6:
        raise SmfParseError(f"MThd length {header_len} < 6", reader.offset)
    fmt = reader.u16()
    n_tracks = reader.u16()
    division = reader.u16()
    reader.take(header_len - 6)
    if fmt not in (0, 1):
        raise SmfParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000:
        raise SmfParseError("SMPTE time division is not supported", 12)
    if division == 0:
        raise SmfParseError("zero ticks per quarter note", 12)

    notes: list[_RawNote] = []
    tempo_changes: list[tuple[int, int]] = []
    warnings: list[str] = []
    tracks_seen = 0
    while tracks_seen < n_tracks and reader.remaining() > 0:
        chunk_start = reader.offset
        chunk_id = reader.take(4)
        chunk_len = reader.u32()
        body = reader.take(chunk_len)
        if chunk_id == b"MTrk":
            _parse_track(_Reader(body, base=chunk_start + 8), notes, tempo_changes, warnings)
            tracks_seen += 1
        # alien chunks are skipped, per the SMF spec
    if tracks_seen < n_tracks:
        warnings.append(f"header declared {n_tracks} tracks, found {tracks_seen}")

    tempo = TempoMap(tempo_changes, division)
    events = [
        NoteEvent(tempo.seconds(n.on_tick), tempo.seconds(n.off_tick), n.pitch)
        for n in notes
        if 0 <= n.pitch <= 127 and n.off_tick > n.on_tick
    ]
    seq = NoteSequence(events=events, warnings=warnings)
    return validate(seq)
