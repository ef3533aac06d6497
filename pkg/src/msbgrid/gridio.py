"""Binary container for grid pyramids and per-camera timelines.

Layout (all multi-byte values little-endian):

    magic "MSBG" | version u32 | level count u32
    per level: h u32, w u32, d u32
    coefficient payload: per level, cell order ((i*w + j)*d + k), 12 x f32
    optional timeline section:
        camera-id byte length u32 | camera-id UTF-8
        entry count u32
        per entry: timestamp f64 | coefficient payload as above

Guidance downsample factors are runtime configuration, not part of the file;
readers take them as an argument.  A timeline file stores its first entry's
pyramid in the base slot so grid-only consumers still get a valid pyramid.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import COEFF_COUNT, BilateralGrid, MultiScaleGrid
from .temporal import GridTimeline

MAGIC = b"MSBG"
VERSION = 1

_DEFAULT_FACTOR = (2, 2)


class GridFileError(ValueError):
    """Malformed grid container; the message carries the failing byte offset."""


def _payload_bytes(msg: MultiScaleGrid) -> bytes:
    return b"".join(lvl.coeffs.astype("<f4").tobytes() for lvl in msg.levels)


def _payload_size(shapes: list[tuple[int, int, int]]) -> int:
    return sum(h * w * d * COEFF_COUNT * 4 for h, w, d in shapes)


def write_grid_file(path, msg: MultiScaleGrid) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(msg.levels))]
    for lvl in msg.levels:
        parts.append(struct.pack("<III", lvl.h, lvl.w, lvl.d))
    parts.append(_payload_bytes(msg))
    Path(path).write_bytes(b"".join(parts))


def write_timeline_file(path, tl: GridTimeline) -> None:
    first = tl.entries[0][1]
    parts = [MAGIC, struct.pack("<II", VERSION, len(first.levels))]
    for lvl in first.levels:
        parts.append(struct.pack("<III", lvl.h, lvl.w, lvl.d))
    parts.append(_payload_bytes(first))
    cam = tl.camera_id.encode("utf-8")
    parts.append(struct.pack("<I", len(cam)))
    parts.append(cam)
    parts.append(struct.pack("<I", len(tl.entries)))
    for t, msg in tl.entries:
        parts.append(struct.pack("<d", t))
        parts.append(_payload_bytes(msg))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise GridFileError(
                f"truncated {what} at byte {len(self.blob)}: need {n} bytes from offset {self.pos}"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.blob)


def _read_header(r: _Reader) -> list[tuple[int, int, int]]:
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise GridFileError(f"bad magic {magic!r} at byte 0; expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise GridFileError(f"unsupported format version {version} at byte 4")
    nlevels = r.u32("level count")
    if nlevels < 1:
        raise GridFileError(f"level count must be >= 1 at byte {r.pos - 4}")
    shapes = []
    for _ in range(nlevels):
        h = r.u32("level height")
        w = r.u32("level width")
        d = r.u32("level depth")
        if min(h, w, d) < 1:
            raise GridFileError(f"non-positive level shape at byte {r.pos - 12}")
        shapes.append((h, w, d))
    return shapes


def _read_payload(r: _Reader, shapes, factors) -> MultiScaleGrid:
    levels = []
    for h, w, d in shapes:
        n = h * w * d * COEFF_COUNT
        raw = r.take(n * 4, "coefficient payload")
        coeffs = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(h, w, d, COEFF_COUNT)
        levels.append(BilateralGrid(coeffs))
    return MultiScaleGrid(levels, factors)


def _factors_for(shapes, guidance_factors) -> list[tuple[int, int]]:
    if guidance_factors is None:
        return [_DEFAULT_FACTOR] * len(shapes)
    factors = [tuple(f) for f in guidance_factors]
    if len(factors) != len(shapes):
        raise GridFileError(
            f"{len(factors)} guidance factor pairs supplied for {len(shapes)} levels"
        )
    return factors


def read_grid_file(path, guidance_factors=None) -> MultiScaleGrid:
    """Read the base pyramid; factors default to (2, 2) per level when omitted."""
    r = _Reader(Path(path).read_bytes())
    shapes = _read_header(r)
    msg = _read_payload(r, shapes, _factors_for(shapes, guidance_factors))
    if not r.exhausted:
        # a timeline section may follow; anything else is rejected
        _read_timeline_section(r, shapes, _factors_for(shapes, guidance_factors))
        if not r.exhausted:
            raise GridFileError(f"trailing data at byte {r.pos}")
    return msg


def _read_timeline_section(r: _Reader, shapes, factors) -> GridTimeline:
    cam_len = r.u32("camera id length")
    try:
        camera_id = r.take(cam_len, "camera id").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise GridFileError(f"camera id is not valid UTF-8 at byte {r.pos - cam_len}") from exc
    n_entries = r.u32("entry count")
    if n_entries < 1:
        raise GridFileError(f"timeline entry count must be >= 1 at byte {r.pos - 4}")
    entries = []
    for _ in range(n_entries):
        t = r.f64("entry timestamp")
        entries.append((t, _read_payload(r, shapes, factors)))
    return GridTimeline(camera_id, entries)


def read_timeline_file(path, guidance_factors=None) -> GridTimeline:
    """Read a timeline container (base pyramid plus timestamped entries)."""
    r = _Reader(Path(path).read_bytes())
    shapes = _read_header(r)
    factors = _factors_for(shapes, guidance_factors)
    _read_payload(r, shapes, factors)  # base slot, mirrors the first entry
    if r.exhausted:
        raise GridFileError(f"no timeline section in grid file (ended at byte {r.pos})")
    tl = _read_timeline_section(r, shapes, factors)
    if not r.exhausted:
        raise GridFileError(f"trailing data at byte {r.pos}")
    return tl
