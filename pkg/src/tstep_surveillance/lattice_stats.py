"""Offline per-cell target statistics.

For every admissible cell this computes, once per scenario, the rate at which
targets enter the cell's FOV square from each source, the escape-time
distribution of those targets, the arrival-weighted expected escape time and
the expected number of targets inside the FOV at any instant.

Escape-time distributions are built by deterministic angular quadrature:
takeoff angles are placed at the midpoints of ``quadrature_n`` equal slices
of the source's angular span, each ray's chord through the square is turned
into a transit time, and the times are accumulated into a CDF on a grid of
``bin_width`` steps.  The CDF is linearly interpolated between grid points.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .geometry import (
    AngularSpan,
    CellIndex,
    LatticeSpec,
    SourceSpec,
    angular_span,
    fov_square,
    transit_times,
)

DEFAULT_QUADRATURE_N = 4096
DEFAULT_BIN_WIDTH = 0.1


class StatsCacheError(Exception):
    """Raised for unreadable, corrupt or stale statistics caches."""


@dataclass(frozen=True)
class EscapeCdf:
    """Piecewise-linear escape-time CDF on ``[t_a, t_b]``.

    Grid points sit at ``t_a + k * bin_width`` for every point strictly below
    ``t_b``, followed by ``t_b`` itself, so the last interval may be short.
    """

    t_a: float
    t_b: float
    bin_width: float
    cdf_values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.cdf_values, dtype=float)
        object.__setattr__(self, "cdf_values", values)
        if not 0 <= self.t_a <= self.t_b:
            raise ValueError(f"need 0 <= t_a <= t_b, got {self.t_a}, {self.t_b}")
        if len(values) != len(escape_grid(self.t_a, self.t_b, self.bin_width)):
            raise ValueError("cdf_values length does not match the grid")
        if np.any(np.diff(values) < 0) or values[0] < 0 or values[-1] != 1.0:
            raise ValueError("cdf_values must be non-decreasing, >= 0 and end at exactly 1")

    @property
    def grid(self) -> np.ndarray:
        return escape_grid(self.t_a, self.t_b, self.bin_width)

    def __call__(self, tau: float) -> float:
        return escape_probability(self, tau)

    def mean(self) -> float:
        """Mean escape time of the interpolated distribution."""
        grid = self.grid
        if len(grid) == 1:
            return self.t_a
        survival = 1.0 - self.cdf_values
        return self.t_a + float(np.sum(0.5 * (survival[1:] + survival[:-1]) * np.diff(grid)))

    def __eq__(self, other):
        if not isinstance(other, EscapeCdf):
            return NotImplemented
        return (
            self.t_a == other.t_a
            and self.t_b == other.t_b
            and self.bin_width == other.bin_width
            and np.array_equal(self.cdf_values, other.cdf_values)
        )

    __hash__ = None


def escape_grid(t_a: float, t_b: float, bin_width: float) -> np.ndarray:
    n_inner = max(int(math.ceil((t_b - t_a) / bin_width)), 1)
    grid = t_a + bin_width * np.arange(n_inner, dtype=float)
    grid = grid[grid < t_b]
    return np.append(grid, t_b) if len(grid) else np.array([t_b])


def escape_probability(cdf: EscapeCdf, tau: float) -> float:
    """P(escape time <= tau): 0 below ``t_a``, 1 above ``t_b``."""
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    if tau < cdf.t_a:
        return 0.0
    if tau >= cdf.t_b:
        return 1.0
    return float(np.interp(tau, cdf.grid, cdf.cdf_values))


@dataclass(frozen=True)
class CellStats:
    arrival_rate: float
    per_source_rates: tuple[float, ...]
    per_source_cdfs: tuple[EscapeCdf | None, ...]
    expected_escape_time: float
    expected_detections: float
    per_source_spans: tuple[AngularSpan, ...] = ()

    def __post_init__(self):
        if any(r < 0 for r in self.per_source_rates):
            raise ValueError("per-source rates must be non-negative")


@dataclass
class StatsTable:
    cells: dict[CellIndex, CellStats]
    fingerprint: str
    stat_term_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __getitem__(self, cell) -> CellStats:
        return self.cells[CellIndex(*cell)]

    def __contains__(self, cell) -> bool:
        return CellIndex(*cell) in self.cells

    def __len__(self) -> int:
        return len(self.cells)

    def __eq__(self, other):
        if not isinstance(other, StatsTable):
            return NotImplemented
        return self.fingerprint == other.fingerprint and self.cells == other.cells


def scenario_fingerprint(
    lattice: LatticeSpec,
    sources: Sequence[SourceSpec],
    speed: float,
    quadrature_n: int = DEFAULT_QUADRATURE_N,
    bin_width: float = DEFAULT_BIN_WIDTH,
) -> str:
    payload = {
        "zone": [lattice.zone.width, lattice.zone.height, list(lattice.zone.origin)],
        "lattice": [lattice.cell_size, lattice.fov_side],
        "sources": [[list(s.position), s.facing.value, s.rate] for s in sources],
        "speed": speed,
        "quadrature_n": quadrature_n,
        "bin_width": bin_width,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def per_source_rate(source: SourceSpec, cell: CellIndex, lattice: LatticeSpec) -> float:
    """Entry rate into the cell's FOV from one source: rate * theta / pi."""
    return rate_from_span(source, angular_span(source, fov_square(cell, lattice)))


def rate_from_span(source: SourceSpec, span: AngularSpan) -> float:
    return source.rate * span.theta / math.pi


def quadrature_angles(span: AngularSpan, quadrature_n: int) -> np.ndarray:
    return span.delta + (np.arange(quadrature_n) + 0.5) * (span.theta / quadrature_n)


def cdf_from_samples(times: np.ndarray, bin_width: float) -> EscapeCdf:
    times = np.sort(np.asarray(times, dtype=float))
    t_a, t_b = float(times[0]), float(times[-1])
    grid = escape_grid(t_a, t_b, bin_width)
    counts = np.searchsorted(times, grid, side="right")
    values = counts / len(times)
    values[-1] = 1.0
    return EscapeCdf(t_a, t_b, bin_width, values)


def build_escape_cdf(
    source: SourceSpec,
    cell: CellIndex,
    lattice: LatticeSpec,
    speed: float,
    quadrature_n: int = DEFAULT_QUADRATURE_N,
    bin_width: float = DEFAULT_BIN_WIDTH,
    span: AngularSpan | None = None,
) -> EscapeCdf:
    if quadrature_n < 2:
        raise ValueError("quadrature_n must be >= 2")
    if speed <= 0:
        raise ValueError("speed must be positive")
    square = fov_square(cell, lattice)
    span = span if span is not None else angular_span(source, square)
    if span.theta <= 0:
        raise ValueError(f"cell {tuple(cell)} is unreachable from source at {source.position}")
    times = transit_times(source, quadrature_angles(span, quadrature_n), square, speed)
    times = times[~np.isnan(times)]
    if len(times) == 0:
        raise ValueError("no quadrature ray intersected the FOV square")
    return cdf_from_samples(times, bin_width)


def compute_cell_stats(
    cell: CellIndex,
    sources: Sequence[SourceSpec],
    lattice: LatticeSpec,
    speed: float,
    quadrature_n: int = DEFAULT_QUADRATURE_N,
    bin_width: float = DEFAULT_BIN_WIDTH,
) -> CellStats:
    square = fov_square(cell, lattice)
    spans, rates, cdfs = [], [], []
    for source in sources:
        span = angular_span(source, square)
        rate = rate_from_span(source, span)
        cdf = None
        if span.theta > 0:
            cdf = build_escape_cdf(source, cell, lattice, speed, quadrature_n, bin_width, span=span)
        spans.append(span)
        rates.append(rate)
        cdfs.append(cdf)

    arrival = 0.0
    for r in rates:
        arrival += r
    escape = 0.0
    if arrival > 0:
        for r, cdf in zip(rates, cdfs):
            if r > 0 and cdf is not None:
                escape += (r / arrival) * cdf.mean()
    return CellStats(
        arrival_rate=arrival,
        per_source_rates=tuple(rates),
        per_source_cdfs=tuple(cdfs),
        expected_escape_time=escape,
        expected_detections=arrival * escape,
        per_source_spans=tuple(spans),
    )


def precompute_all(
    lattice: LatticeSpec,
    sources: Sequence[SourceSpec],
    speed: float,
    quadrature_n: int = DEFAULT_QUADRATURE_N,
    bin_width: float = DEFAULT_BIN_WIDTH,
    workers: int | None = None,
) -> StatsTable:
    cells = lattice.admissible_cells()
    if not cells:
        raise ValueError("scenario has no admissible cells (fov_side larger than the zone?)")

    def one(cell):
        return compute_cell_stats(cell, sources, lattice, speed, quadrature_n, bin_width)

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, cells))
    else:
        results = [one(c) for c in cells]
    return StatsTable(
        cells=dict(zip(cells, results)),
        fingerprint=scenario_fingerprint(lattice, sources, speed, quadrature_n, bin_width),
    )


# --------------------------------------------------------------------------
# Binary cache.  Layout (little endian) is documented in docs/formats.md.
# --------------------------------------------------------------------------
CACHE_MAGIC = b"TSSTATS\0"
CACHE_VERSION = 1
_HEADER = struct.Struct("<8sH64sII")
_CELL = struct.Struct("<iiddd")
_SOURCE = struct.Struct("<dddB")
_CDF = struct.Struct("<dddI")


def _write(fh: BinaryIO, table: StatsTable, n_sources: int) -> None:
    fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, table.fingerprint.encode(), len(table), n_sources))
    for cell, st in table.cells.items():
        fh.write(_CELL.pack(cell.col, cell.row, st.arrival_rate, st.expected_escape_time, st.expected_detections))
        for j in range(n_sources):
            span = st.per_source_spans[j]
            cdf = st.per_source_cdfs[j]
            fh.write(_SOURCE.pack(st.per_source_rates[j], span.delta, span.theta, cdf is not None))
            if cdf is not None:
                fh.write(_CDF.pack(cdf.t_a, cdf.t_b, cdf.bin_width, len(cdf.cdf_values)))
                fh.write(np.asarray(cdf.cdf_values, dtype="<f8").tobytes())


def save_stats(table: StatsTable, path: str | Path) -> None:
    n_sources = len(next(iter(table.cells.values())).per_source_rates)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        _write(fh, table, n_sources)
    tmp.replace(path)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise StatsCacheError("truncated stats cache")
    return data


def load_stats(path: str | Path, expected_fingerprint: str | None = None) -> StatsTable:
    """Load a cache; a fingerprint mismatch raises :class:`StatsCacheError`."""
    with open(path, "rb") as fh:
        magic, version, fp, n_cells, n_sources = _HEADER.unpack(_read_exact(fh, _HEADER.size))
        if magic != CACHE_MAGIC:
            raise StatsCacheError(f"{path}: not a stats cache")
        if version != CACHE_VERSION:
            raise StatsCacheError(f"{path}: unsupported cache version {version}")
        fingerprint = fp.decode()
        if expected_fingerprint is not None and fingerprint != expected_fingerprint:
            raise StatsCacheError(f"{path}: stale cache (fingerprint {fingerprint[:12]} != {expected_fingerprint[:12]})")
        cells = {}
        for _ in range(n_cells):
            col, row, arrival, escape, detections = _CELL.unpack(_read_exact(fh, _CELL.size))
            rates, spans, cdfs = [], [], []
            for _ in range(n_sources):
                rate, delta, theta, has_cdf = _SOURCE.unpack(_read_exact(fh, _SOURCE.size))
                rates.append(rate)
                spans.append(AngularSpan(delta, theta))
                cdf = None
                if has_cdf:
                    t_a, t_b, bw, n = _CDF.unpack(_read_exact(fh, _CDF.size))
                    values = np.frombuffer(_read_exact(fh, 8 * n), dtype="<f8").astype(float)
                    cdf = EscapeCdf(t_a, t_b, bw, values)
                cdfs.append(cdf)
            cells[CellIndex(col, row)] = CellStats(
                arrival, tuple(rates), tuple(cdfs), escape, detections, tuple(spans)
            )
        if fh.read(1):
            raise StatsCacheError(f"{path}: trailing bytes in stats cache")
    return StatsTable(cells=cells, fingerprint=fingerprint)


def load_or_build(
    path: str | Path | None,
    lattice: LatticeSpec,
    sources: Sequence[SourceSpec],
    speed: float,
    quadrature_n: int = DEFAULT_QUADRATURE_N,
    bin_width: float = DEFAULT_BIN_WIDTH,
) -> tuple[StatsTable, bool]:
    """Return ``(table, reused)``; rebuilds and rewrites on a fingerprint miss."""
    fp = scenario_fingerprint(lattice, sources, speed, quadrature_n, bin_width)
    if path is not None and Path(path).exists():
        try:
            return load_stats(path, expected_fingerprint=fp), True
        except StatsCacheError:
            pass
    table = precompute_all(lattice, sources, speed, quadrature_n, bin_width)
    if path is not None:
        save_stats(table, path)
    return table, False

