"""Online expected-detection values for one sensor's planning round.

The value of a space-time node ``(cell, t)`` blends what the sensor sees now
with the precomputed arrival statistics:

* a deterministic part: currently observed targets, propagated along their
  straight-line tracks, that will still be inside the destination FOV at ``t``;
* a statistical part for the share ``kappa`` of the destination FOV that the
  sensor currently covers: expected arrivals into the planning cell's FOV
  over ``t`` steps minus those expected to have escaped again;
* ``(1 - kappa)`` times the destination cell's stationary expectation for the
  part of the destination FOV the sensor cannot currently see.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import CellIndex, LatticeSpec, chebyshev, fov_square, overlap_fraction
from .lattice_stats import CellStats, StatsTable, escape_probability


@dataclass(frozen=True)
class TargetObservation:
    position: tuple[float, float]
    velocity: tuple[float, float]


@dataclass
class ValueLattice:
    """Expected detections keyed by ``(cell, t)`` for ``t`` in ``1..horizon``."""

    planning_cell: CellIndex
    horizon: int
    values: dict[tuple[CellIndex, int], float]

    def __getitem__(self, key: tuple[CellIndex, int]) -> float:
        return self.values[key]

    def __contains__(self, key) -> bool:
        return key in self.values

    def copy(self) -> "ValueLattice":
        return ValueLattice(self.planning_cell, self.horizon, dict(self.values))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell_col", "cell_row", "t", "value"])
            for (cell, t), v in sorted(self.values.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                writer.writerow([cell.col, cell.row, t, repr(v)])


def _as_arrays(observations) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(observations, tuple) and len(observations) == 2 and isinstance(observations[0], np.ndarray):
        return observations
    if len(observations) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2))
    pos = np.array([o.position for o in observations], dtype=float)
    vel = np.array([o.velocity for o in observations], dtype=float)
    return pos, vel


def surviving_count(
    observations: Sequence[TargetObservation] | tuple[np.ndarray, np.ndarray],
    dest: CellIndex,
    t: int,
    lattice: LatticeSpec,
) -> int:
    """Observed targets that will lie inside ``dest``'s FOV after ``t`` steps."""
    if t < 1:
        raise ValueError("t must be >= 1")
    pos, vel = _as_arrays(observations)
    if len(pos) == 0:
        return 0
    future = pos + vel * t
    return int(np.count_nonzero(fov_square(dest, lattice).contains(future[:, 0], future[:, 1])))


def statistical_term(cell_stats: CellStats, t: int) -> float:
    """Expected arrivals into the FOV over ``t`` steps minus expected escapes.

    An arrival during step ``s`` (1-based) has had ``t - s`` steps to escape.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    escaped = 0.0
    for rate, cdf in zip(cell_stats.per_source_rates, cell_stats.per_source_cdfs):
        if rate == 0 or cdf is None:
            continue
        p = 0.0
        for s in range(1, t + 1):
            p += escape_probability(cdf, float(t - s))
        escaped += rate * p
    return cell_stats.arrival_rate * t - escaped


def _cached_statistical_term(stats: StatsTable, cell: CellIndex, t: int) -> float:
    key = (cell, t)
    value = stats.stat_term_cache.get(key)
    if value is None:
        value = stats.stat_term_cache[key] = statistical_term(stats[cell], t)
    return value


def node_value(
    observations: Sequence[TargetObservation] | tuple[np.ndarray, np.ndarray],
    origin: CellIndex,
    dest: CellIndex,
    t: int,
    stats: StatsTable,
    lattice: LatticeSpec,
) -> float:
    """Expected detections at ``dest`` after ``t`` steps, planned from ``origin``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if origin not in stats or dest not in stats:
        raise ValueError(f"cells {tuple(origin)} / {tuple(dest)} must both be admissible")
    if chebyshev(origin, dest) > t:
        raise ValueError(f"{tuple(dest)} is not reachable from {tuple(origin)} in {t} steps")
    kappa = overlap_fraction(origin, dest, lattice)
    value = surviving_count(observations, dest, t, lattice)
    value += kappa * _cached_statistical_term(stats, CellIndex(*origin), t)
    value += (1.0 - kappa) * stats[dest].expected_detections
    return max(0.0, value)


def reachable_nodes(sensor_cell: CellIndex, horizon: int, stats: StatsTable) -> Iterable[tuple[CellIndex, int]]:
    c0, r0 = sensor_cell
    for t in range(1, horizon + 1):
        for dr in range(-t, t + 1):
            for dc in range(-t, t + 1):
                cell = CellIndex(c0 + dc, r0 + dr)
                if cell in stats:
                    yield cell, t


def build_value_lattice(
    sensor_cell: CellIndex,
    observations: Sequence[TargetObservation],
    horizon: int,
    stats: StatsTable,
    lattice: LatticeSpec,
) -> ValueLattice:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    sensor_cell = CellIndex(*sensor_cell)
    if sensor_cell not in stats:
        raise ValueError(f"sensor cell {tuple(sensor_cell)} is not admissible")
    arrays = _as_arrays(observations)
    values = {
        (cell, t): node_value(arrays, sensor_cell, cell, t, stats, lattice)
        for cell, t in reachable_nodes(sensor_cell, horizon, stats)
    }
    return ValueLattice(sensor_cell, horizon, values)
