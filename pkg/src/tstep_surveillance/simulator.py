"""Discrete-time surveillance world and experiment runner.

One simulation step is: replan sensors that are due (using what they saw at
the end of the previous step), spawn targets at the sources, advance every
target along its straight track, move every sensor one lattice move, detect,
and accumulate metrics.

All randomness comes from independent sub-streams of the configured seed:
one per source for spawning, one per sensor for random walks and one for
priority tie-breaks, so changing the sensor team never perturbs traffic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .config import ConfigError, ScenarioConfig
from .estimator import TargetObservation
from .geometry import CellIndex, LatticeSpec, SourceSpec, ZoneSpec, fov_square, neighbors9, ray_box_interval
from .lattice_stats import StatsTable
from .planner import MotionPlan, RoundTrace, coordinate_round, uncoordinated_round
from .streams import SpawnRecord, StreamPlayer, checksum

PLANNING_STRATEGIES = ("t-step-coordinated", "t-step-uncoordinated")

_SPAWN_KEY = 0
_SENSOR_KEY = 1
_PRIORITY_KEY = 2


class SimulationError(RuntimeError):
    pass


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def poisson_inverse(u: float, lam: float) -> int:
    """Smallest k with Poisson(lam) CDF(k) >= u."""
    if lam <= 0:
        return 0
    k = 0
    p = math.exp(-lam)
    cdf = p
    while u > cdf:
        k += 1
        p *= lam / k
        if p == 0.0:
            break
        cdf += p
    return k


@dataclass(frozen=True)
class TargetState:
    id: int
    position: tuple[float, float]
    velocity: tuple[float, float]
    spawned_at: int
    active: bool
    entered_zone: bool


@dataclass
class SensorState:
    id: int
    cell: CellIndex
    plan: MotionPlan | None = None
    cursor: int = 0


@dataclass
class StepMetrics:
    step: int
    in_zone: int
    detected_any: int
    detected_exactly: tuple[int, int, int, int]  # multiplicity 1, 2, 3, 4+
    detection_pairs: int
    g: np.ndarray = field(repr=False)
    histogram: tuple[int, ...] = ()  # histogram[k] = targets seen by exactly k sensors
    spawned: int = 0
    active: int = 0
    deactivated: int = 0
    discarded: int = 0
    sensor_cells: tuple[CellIndex, ...] = ()

    @property
    def undetected(self) -> int:
        return self.in_zone - self.detected_any

    def log_record(self) -> dict:
        return {
            "step": self.step,
            "in_zone": self.in_zone,
            "detected_any": self.detected_any,
            "multiplicity": list(self.detected_exactly),
            "sensor_cells": [list(c) for c in self.sensor_cells],
            "spawned": self.spawned,
            "active": self.active,
            "deactivated": self.deactivated,
            "discarded": self.discarded,
        }


@dataclass(frozen=True)
class ExperimentSummary:
    J: int
    AD: float
    ZD: float
    AF: float
    D1S: float
    D2S: float
    D3S: float
    NS: int
    TV: float
    steps: int
    seed: int
    strategy: str
    stream_checksum: str = ""


def average_fraction(ad: float, zd: float) -> float:
    total = ad + zd
    return ad / total if total > 0 else 0.0


def draw_spawns(
    sources: Sequence[SourceSpec], step: int, rngs: Sequence[np.random.Generator], speed: float
) -> list[SpawnRecord]:
    """Poisson spawn draws for one step, one sub-stream per source."""
    out = []
    for j, (source, rng) in enumerate(zip(sources, rngs)):
        n = poisson_inverse(float(rng.random()), source.rate)
        for _ in range(n):
            out.append(SpawnRecord(step, j, float(rng.uniform(0.0, math.pi)), speed))
    return out


def spawn_targets(
    sources: Sequence[SourceSpec],
    step: int,
    rngs: Sequence[np.random.Generator],
    speed: float,
    zone: ZoneSpec,
) -> list[TargetState]:
    """Draw this step's spawns and keep those whose track crosses the zone."""
    kept = []
    for i, rec in enumerate(draw_spawns(sources, step, rngs, speed)):
        src = sources[rec.source]
        dx, dy = src.direction(rec.angle)
        t_in, t_out = ray_box_interval(src.position[0], src.position[1], dx, dy, zone.bounds)
        if t_out >= t_in:
            kept.append(TargetState(i, src.position, (dx * rec.speed, dy * rec.speed), step, True, False))
    return kept


class World:
    """Mutable simulation state: targets, sensors and lifetime counters."""

    def __init__(self, cfg: ScenarioConfig, seed: int, spawn_records: list[SpawnRecord] | None = None):
        self.cfg = cfg
        self.lattice: LatticeSpec = cfg.lattice
        self.zone = cfg.zone
        self.sources = cfg.sources
        self.seed = seed
        self.spawn_rngs = [substream(seed, _SPAWN_KEY, j) for j in range(len(cfg.sources))]
        self.sensor_rngs = [substream(seed, _SENSOR_KEY, i) for i in range(cfg.n_sensors)]
        self.priority_rng = substream(seed, _PRIORITY_KEY)
        self.player = StreamPlayer(spawn_records) if spawn_records is not None else None
        self.consumed: list[SpawnRecord] = []

        self.ids = np.zeros(0, dtype=np.int64)
        self.pos = np.zeros((0, 2))
        self.vel = np.zeros((0, 2))
        self.spawned_at = np.zeros(0, dtype=np.int64)
        self.entered = np.zeros(0, dtype=bool)
        self.traveled = np.zeros(0)
        self.exit_dist = np.zeros(0)

        self.n_spawned = 0
        self.n_deactivated = 0
        self.n_discarded = 0
        self.sensors = [SensorState(i, CellIndex(*c)) for i, c in enumerate(cfg.sensor_cells)]

    # -- targets -----------------------------------------------------------
    def spawn(self, step: int) -> None:
        if self.player is not None:
            records = self.player.at(step)
        else:
            records = draw_spawns(self.sources, step, self.spawn_rngs, self.cfg.target_speed)
        self.consumed.extend(records)
        new_pos, new_vel, new_exit = [], [], []
        for rec in records:
            src = self.sources[rec.source]
            dx, dy = src.direction(rec.angle)
            t_in, t_out = ray_box_interval(src.position[0], src.position[1], dx, dy, self.zone.bounds)
            if not t_out >= t_in:
                self.n_discarded += 1
                continue
            new_pos.append(src.position)
            new_vel.append((dx * rec.speed, dy * rec.speed))
            new_exit.append(float(t_out))
        self.n_spawned += len(records)
        if not new_pos:
            return
        n = len(new_pos)
        first_id = self.n_spawned - len(records)
        self.ids = np.concatenate([self.ids, first_id + np.arange(n)])
        self.pos = np.vstack([self.pos, np.array(new_pos, dtype=float)])
        self.vel = np.vstack([self.vel, np.array(new_vel, dtype=float)])
        self.spawned_at = np.concatenate([self.spawned_at, np.full(n, step)])
        self.entered = np.concatenate([self.entered, np.zeros(n, dtype=bool)])
        self.traveled = np.concatenate([self.traveled, np.zeros(n)])
        self.exit_dist = np.concatenate([self.exit_dist, np.array(new_exit)])

    def advance(self) -> None:
        """Move every active target one step and retire the ones that left."""
        if len(self.ids) == 0:
            return
        self.pos = self.pos + self.vel
        self.traveled = self.traveled + np.hypot(self.vel[:, 0], self.vel[:, 1])
        inside = self.zone.contains(self.pos[:, 0], self.pos[:, 1])
        self.entered |= inside
        # convex zone: once past the exit point along the track it can never return
        gone = (self.entered & ~inside) | (self.traveled > self.exit_dist + 1e-9)
        if gone.any():
            keep = ~gone
            self.n_deactivated += int(gone.sum())
            self.ids = self.ids[keep]
            self.pos = self.pos[keep]
            self.vel = self.vel[keep]
            self.spawned_at = self.spawned_at[keep]
            self.entered = self.entered[keep]
            self.traveled = self.traveled[keep]
            self.exit_dist = self.exit_dist[keep]

    def in_zone_mask(self) -> np.ndarray:
        return self.zone.contains(self.pos[:, 0], self.pos[:, 1])

    def target_states(self) -> list[TargetState]:
        return [
            TargetState(int(i), tuple(p), tuple(v), int(s), True, bool(e))
            for i, p, v, s, e in zip(self.ids, self.pos, self.vel, self.spawned_at, self.entered)
        ]

    # -- sensors -----------------------------------------------------------
    def observations(self, cell: CellIndex) -> tuple[np.ndarray, np.ndarray]:
        """Positions and velocities of in-zone targets inside ``cell``'s FOV."""
        mask = self.in_zone_mask() & fov_square(cell, self.lattice).contains(self.pos[:, 0], self.pos[:, 1])
        return self.pos[mask], self.vel[mask]

    def observation_list(self, cell: CellIndex) -> list[TargetObservation]:
        pos, vel = self.observations(cell)
        return [TargetObservation(tuple(p), tuple(v)) for p, v in zip(pos, vel)]

    def detect(self) -> tuple[np.ndarray, np.ndarray]:
        """Detection matrix g[m, s] over in-zone targets, plus the in-zone mask."""
        mask = self.in_zone_mask()
        pts = self.pos[mask]
        g = np.zeros((len(pts), len(self.sensors)), dtype=np.int8)
        for s, sensor in enumerate(self.sensors):
            g[:, s] = fov_square(sensor.cell, self.lattice).contains(pts[:, 0], pts[:, 1])
        return g, mask


def replan_due(sensor: SensorState, replan: str) -> bool:
    if sensor.plan is None or sensor.cursor >= len(sensor.plan.path):
        return True
    return replan == "every-step"


def plan_round(world: World, stats: StatsTable, strategy: str, trace: RoundTrace | None = None) -> list[MotionPlan]:
    cells = [s.cell for s in world.sensors]
    obs = [world.observations(c) for c in cells]
    if strategy == "t-step-coordinated":
        return coordinate_round(cells, obs, stats, world.lattice, world.cfg.horizon, world.priority_rng, trace)
    return uncoordinated_round(cells, obs, stats, world.lattice, world.cfg.horizon)


def sensor_step(sensor: SensorState, strategy: str, lattice: LatticeSpec, rng: np.random.Generator) -> CellIndex:
    """Next cell for one sensor; planning strategies consume their plan."""
    if strategy == "stationary":
        return sensor.cell
    if strategy == "random-walk":
        options = neighbors9(sensor.cell, lattice)
        return options[int(rng.integers(len(options)))]
    if sensor.plan is None or sensor.cursor >= len(sensor.plan.path):
        raise SimulationError(f"sensor {sensor.id} ran out of plan (replan cadence bug)")
    nxt = sensor.plan.path[sensor.cursor]
    sensor.cursor += 1
    return nxt


@dataclass
class ExperimentResult:
    summary: ExperimentSummary
    steps: list[StepMetrics]
    spawn_records: list[SpawnRecord]
    replan_steps: list[int]


def run_experiment(
    cfg: ScenarioConfig,
    stats: StatsTable | None,
    strategy: str | None = None,
    seed: int | None = None,
    spawn_stream: list[SpawnRecord] | None = None,
    step_log: IO[str] | None = None,
    plan_trace: IO[str] | None = None,
    check_invariants: bool = False,
) -> ExperimentResult:
    strategy = strategy or cfg.strategy
    seed = cfg.seed if seed is None else seed
    planning = strategy in PLANNING_STRATEGIES
    if planning:
        if stats is None:
            raise ConfigError("planning strategies need a statistics table")
        if stats.fingerprint != cfg.fingerprint():
            raise ConfigError("statistics table fingerprint does not match the scenario", "stats-cache")

    world = World(cfg, seed, spawn_stream)
    metrics: list[StepMetrics] = []
    replans: list[int] = []
    n_rounds = 0
    for step in range(cfg.steps):
        if planning and any(replan_due(s, cfg.replan) for s in world.sensors):
            trace = RoundTrace() if plan_trace is not None else None
            plans = plan_round(world, stats, strategy, trace)
            for sensor, plan in zip(world.sensors, plans):
                sensor.plan, sensor.cursor = plan, 0
            if trace is not None:
                trace.write_jsonl(plan_trace, n_rounds)
            replans.append(step)
            n_rounds += 1

        world.spawn(step)
        world.advance()
        for sensor, rng in zip(world.sensors, world.sensor_rngs):
            nxt = sensor_step(sensor, strategy, world.lattice, rng)
            if nxt not in neighbors9(sensor.cell, world.lattice):
                raise SimulationError(f"sensor {sensor.id} attempted an illegal move {sensor.cell} -> {nxt}")
            sensor.cell = nxt

        g, _ = world.detect()
        mult = g.sum(axis=1, dtype=np.int64)
        exactly = (
            int(np.count_nonzero(mult == 1)),
            int(np.count_nonzero(mult == 2)),
            int(np.count_nonzero(mult == 3)),
            int(np.count_nonzero(mult >= 4)),
        )
        m = StepMetrics(
            step=step,
            in_zone=len(g),
            detected_any=int(np.count_nonzero(mult > 0)),
            detected_exactly=exactly,
            detection_pairs=int(g.sum()),
            g=(mult > 0).astype(np.int8),
            histogram=tuple(int(x) for x in np.bincount(mult, minlength=1)),
            spawned=world.n_spawned,
            active=len(world.ids),
            deactivated=world.n_deactivated,
            discarded=world.n_discarded,
            sensor_cells=tuple(s.cell for s in world.sensors),
        )
        if check_invariants:
            check_step(m)
        metrics.append(m)
        if step_log is not None:
            step_log.write(json.dumps(m.log_record(), sort_keys=True) + "\n")

    return ExperimentResult(summarize(metrics, cfg, strategy, seed, checksum(world.consumed)), metrics, world.consumed, replans)


def check_step(m: StepMetrics) -> None:
    if m.spawned != m.active + m.deactivated + m.discarded:
        raise SimulationError(f"step {m.step}: target conservation violated")
    if m.detected_any + m.undetected != m.in_zone or m.detected_any > m.in_zone:
        raise SimulationError(f"step {m.step}: detected/undetected do not add up")
    if sum(m.detected_exactly) != m.detected_any:
        raise SimulationError(f"step {m.step}: multiplicity histogram does not sum to detected_any")
    if sum(k * n for k, n in enumerate(m.histogram)) != m.detection_pairs:
        raise SimulationError(f"step {m.step}: multiplicity-weighted sum != detection pairs")
    hist = tuple(m.histogram) + (0,) * max(0, 4 - len(m.histogram))
    if tuple(hist[1:4]) + (sum(hist[4:]),) != tuple(m.detected_exactly):
        raise SimulationError(f"step {m.step}: D1S/D2S/D3S buckets disagree with the histogram")


def summarize(metrics: list[StepMetrics], cfg: ScenarioConfig, strategy: str, seed: int, stream_sum: str = "") -> ExperimentSummary:
    n = len(metrics)
    J = sum(m.detected_any for m in metrics)
    ad = J / n
    zd = sum(m.undetected for m in metrics) / n
    return ExperimentSummary(
        J=J,
        AD=ad,
        ZD=zd,
        AF=average_fraction(ad, zd),
        D1S=sum(m.detected_exactly[0] for m in metrics) / n,
        D2S=sum(m.detected_exactly[1] for m in metrics) / n,
        D3S=sum(m.detected_exactly[2] for m in metrics) / n,
        NS=cfg.n_sensors,
        TV=cfg.target_speed,
        steps=n,
        seed=seed,
        strategy=strategy,
        stream_checksum=stream_sum,
    )
