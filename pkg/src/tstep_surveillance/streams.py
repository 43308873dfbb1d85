"""Binary spawn streams for record/replay of target traffic.

Layout (little endian)::

    header  : magic b"TSSPAWN\\0" (8 bytes), version u16, record count u64
    record  : step u32, source index u16, takeoff angle f64, speed f64

Records are ordered by step, then by source index, then by draw order.
"""

from __future__ import annotations

import hashlib
import struct
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

STREAM_MAGIC = b"TSSPAWN\0"
STREAM_VERSION = 1
_HEADER = struct.Struct("<8sHQ")
_RECORD = struct.Struct("<IHdd")


class StreamError(Exception):
    pass


@dataclass(frozen=True)
class SpawnRecord:
    step: int
    source: int
    angle: float
    speed: float


def encode(records: list[SpawnRecord]) -> bytes:
    parts = [_HEADER.pack(STREAM_MAGIC, STREAM_VERSION, len(records))]
    parts.extend(_RECORD.pack(r.step, r.source, r.angle, r.speed) for r in records)
    return b"".join(parts)


def decode(data: bytes) -> list[SpawnRecord]:
    if len(data) < _HEADER.size:
        raise StreamError("spawn stream too short for header")
    magic, version, n = _HEADER.unpack_from(data)
    if magic != STREAM_MAGIC:
        raise StreamError("not a spawn stream")
    if version != STREAM_VERSION:
        raise StreamError(f"unsupported spawn stream version {version}")
    if len(data) != _HEADER.size + n * _RECORD.size:
        raise StreamError("spawn stream length does not match its record count")
    return [SpawnRecord(*_RECORD.unpack_from(data, _HEADER.size + i * _RECORD.size)) for i in range(n)]


def write_stream(records: list[SpawnRecord], path: str | Path) -> str:
    """Write ``records``; returns the SHA-256 of the bytes written."""
    data = encode(records)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_stream(path: str | Path) -> list[SpawnRecord]:
    return decode(Path(path).read_bytes())


def checksum(records: list[SpawnRecord]) -> str:
    return hashlib.sha256(encode(records)).hexdigest()


class StreamPlayer:
    """Serves recorded spawns step by step."""

    def __init__(self, records: list[SpawnRecord]):
        self._by_step: dict[int, list[SpawnRecord]] = defaultdict(list)
        for r in records:
            self._by_step[r.step].append(r)

    def at(self, step: int) -> list[SpawnRecord]:
        return self._by_step.get(step, [])
