"""Depth-limited search on the space-time tree and priority coordination.

Node values do not depend on the path that reaches them, so the search over
all ``9**T`` move sequences is done as a forward dynamic programme over
``(cell, t)``.  Partial sums are accumulated left to right, the same order
as a brute-force enumeration, which makes the optimum bit-identical to it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .estimator import TargetObservation, ValueLattice, build_value_lattice
from .geometry import MOVES, CellIndex, LatticeSpec, overlap_fraction
from .lattice_stats import StatsTable


class PlanningError(Exception):
    pass


@dataclass(frozen=True)
class MotionPlan:
    sensor_id: int
    start: CellIndex
    path: tuple[CellIndex, ...]
    node_values: tuple[float, ...]
    objective: float

    @property
    def horizon(self) -> int:
        return len(self.path)


@dataclass(frozen=True)
class PriorityOrder:
    order: tuple[int, ...]
    # groups of sensor ids that shared an objective, in their drawn order
    ties: tuple[tuple[int, ...], ...] = ()


def best_path(values: ValueLattice, start: CellIndex, horizon: int | None = None, sensor_id: int = 0) -> MotionPlan:
    """Highest-objective path of ``horizon`` moves from ``start``.

    Ties resolve to the lexicographically smallest move sequence in the
    canonical move order (stay first).
    """
    horizon = values.horizon if horizon is None else horizon
    start = CellIndex(*start)
    if horizon < 1:
        raise PlanningError("horizon must be >= 1")
    vals = values.values

    # frontier: cell -> (prefix sum, move sequence, path)
    frontier: dict[CellIndex, tuple[float, tuple[int, ...], tuple[CellIndex, ...]]] = {
        start: (0.0, (), ())
    }
    for t in range(1, horizon + 1):
        nxt: dict[CellIndex, tuple[float, tuple[int, ...], tuple[CellIndex, ...]]] = {}
        for cell, (acc, moves, path) in frontier.items():
            for m, (dc, dr) in enumerate(MOVES):
                nb = CellIndex(cell.col + dc, cell.row + dr)
                v = vals.get((nb, t))
                if v is None:
                    continue
                cand = (acc + v, moves + (m,), path + (nb,))
                cur = nxt.get(nb)
                if cur is None or cand[0] > cur[0] or (cand[0] == cur[0] and cand[1] < cur[1]):
                    nxt[nb] = cand
        if not nxt:
            raise PlanningError(f"no reachable node at t={t} from {tuple(start)}")
        frontier = nxt

    best = None
    for entry in frontier.values():
        if best is None or entry[0] > best[0] or (entry[0] == best[0] and entry[1] < best[1]):
            best = entry
    total, _, path = best
    node_values = tuple(vals[(c, t)] for t, c in enumerate(path, start=1))
    return MotionPlan(sensor_id, start, path, node_values, total)


def prioritize(plans: Sequence[MotionPlan], rng: np.random.Generator) -> PriorityOrder:
    """Sort sensors by objective, descending; equal objectives in random order."""
    by_objective: dict[float, list[int]] = {}
    for plan in plans:
        by_objective.setdefault(plan.objective, []).append(plan.sensor_id)
    order: list[int] = []
    ties = []
    for objective in sorted(by_objective, reverse=True):
        group = sorted(by_objective[objective])
        if len(group) > 1:
            group = [group[i] for i in rng.permutation(len(group))]
            ties.append(tuple(group))
        order.extend(group)
    return PriorityOrder(tuple(order), tuple(ties))


def apply_overlap_penalty(
    values: ValueLattice, higher_plans: Sequence[MotionPlan], lattice: LatticeSpec
) -> ValueLattice:
    """Scale each node by ``(1 - f)`` per higher-priority sensor at the same t."""
    out = values.copy()
    reach = lattice.fov_side / lattice.cell_size
    for (cell, t), v in out.values.items():
        for plan in higher_plans:
            if t > len(plan.path):
                continue
            other = plan.path[t - 1]
            if abs(other.col - cell.col) >= reach or abs(other.row - cell.row) >= reach:
                continue
            v = v - overlap_fraction(cell, other, lattice) * v
        out.values[(cell, t)] = max(0.0, v)
    return out


@dataclass
class RoundTrace:
    """Per-round record of priorities and objectives before/after penalties."""

    entries: list[dict] = field(default_factory=list)

    def write_jsonl(self, fh: IO[str], round_index: int) -> None:
        for e in self.entries:
            fh.write(json.dumps({"round": round_index, **e}, sort_keys=True) + "\n")


def coordinate_round(
    sensor_cells: Sequence[CellIndex],
    observations: Sequence[Sequence[TargetObservation]],
    stats: StatsTable,
    lattice: LatticeSpec,
    horizon: int,
    rng: np.random.Generator,
    trace: RoundTrace | None = None,
) -> list[MotionPlan]:
    """Plan every sensor, then replan lower priorities against higher ones.

    Returns plans in sensor-id order.
    """
    lattices = [
        build_value_lattice(cell, obs, horizon, stats, lattice)
        for cell, obs in zip(sensor_cells, observations)
    ]
    plans = [best_path(vl, cell, horizon, sensor_id=i) for i, (vl, cell) in enumerate(zip(lattices, sensor_cells))]
    priority = prioritize(plans, rng)

    final: dict[int, MotionPlan] = {}
    finalized: list[MotionPlan] = []
    for rank, sid in enumerate(priority.order):
        if rank == 0:
            plan = plans[sid]
        else:
            penalized = apply_overlap_penalty(lattices[sid], finalized, lattice)
            plan = best_path(penalized, sensor_cells[sid], horizon, sensor_id=sid)
        final[sid] = plan
        finalized.append(plan)
        if trace is not None:
            trace.entries.append(
                {
                    "sensor": sid,
                    "priority": rank + 1,
                    "path": [list(c) for c in plan.path],
                    "objective_before": plans[sid].objective,
                    "objective_after": plan.objective,
                }
            )
    return [final[i] for i in range(len(sensor_cells))]


def uncoordinated_round(
    sensor_cells: Sequence[CellIndex],
    observations: Sequence[Sequence[TargetObservation]],
    stats: StatsTable,
    lattice: LatticeSpec,
    horizon: int,
) -> list[MotionPlan]:
    return [
        best_path(build_value_lattice(cell, obs, horizon, stats, lattice), cell, horizon, sensor_id=i)
        for i, (cell, obs) in enumerate(zip(sensor_cells, observations))
    ]
