"""Scenario configuration: parsing, validation, defaults and serialization.

Scenarios are YAML files.  Unknown keys are rejected, every default is filled
in explicitly after parsing, and ``dump_scenario`` writes a file that parses
back to an identical :class:`ScenarioConfig`.  See ``scenarios/default.yaml``
for the annotated schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .geometry import CellIndex, Facing, LatticeSpec, SourceSpec, ZoneSpec
from .lattice_stats import DEFAULT_BIN_WIDTH, DEFAULT_QUADRATURE_N, scenario_fingerprint

STRATEGIES = ("t-step-coordinated", "t-step-uncoordinated", "stationary", "random-walk")
REPLAN_MODES = ("every-horizon", "every-step")


class ConfigError(Exception):
    """Invalid scenario; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class ScenarioConfig:
    zone: ZoneSpec
    cell_size: float
    fov_side: float
    sources: tuple[SourceSpec, ...]
    arrival_rate: float
    target_speed: float
    sensor_cells: tuple[CellIndex, ...]
    horizon: int = 3
    steps: int = 150
    strategy: str = "t-step-coordinated"
    replan: str = "every-horizon"
    seed: int = 0
    quadrature_n: int = DEFAULT_QUADRATURE_N
    bin_width: float = DEFAULT_BIN_WIDTH

    @property
    def lattice(self) -> LatticeSpec:
        return LatticeSpec(self.zone, self.cell_size, self.fov_side)

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_cells)

    def fingerprint(self) -> str:
        return scenario_fingerprint(self.lattice, self.sources, self.target_speed, self.quadrature_n, self.bin_width)

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        if "arrival_rate" in kwargs and "sources" not in kwargs:
            kwargs["sources"] = tuple(replace(s, rate=kwargs["arrival_rate"]) for s in self.sources)
        cfg = replace(self, **kwargs)
        validate(cfg)
        return cfg


def perimeter_sources(zone: ZoneSpec, count: int, offset: float, rate: float) -> tuple[SourceSpec, ...]:
    """``count / 4`` sources per side, evenly spaced, ``offset`` outside the zone."""
    if count % 4:
        raise ConfigError(f"perimeter layout needs a multiple of 4 sources, got {count}", "sources.count")
    per_side = count // 4
    x0, y0, x1, y1 = zone.bounds
    out = []
    for i in range(per_side):
        f = (i + 0.5) / per_side
        out.append(SourceSpec((x0 + f * zone.width, y0 - offset), Facing.NORTH, rate))
    for i in range(per_side):
        f = (i + 0.5) / per_side
        out.append(SourceSpec((x1 + offset, y0 + f * zone.height), Facing.WEST, rate))
    for i in range(per_side):
        f = (i + 0.5) / per_side
        out.append(SourceSpec((x1 - f * zone.width, y1 + offset), Facing.SOUTH, rate))
    for i in range(per_side):
        f = (i + 0.5) / per_side
        out.append(SourceSpec((x0 - offset, y1 - f * zone.height), Facing.EAST, rate))
    return tuple(out)


def spread_sensors(lattice: LatticeSpec, count: int) -> tuple[CellIndex, ...]:
    """``count`` admissible cells on an evenly spaced grid, row-major."""
    cells = lattice.admissible_cells()
    if not cells:
        raise ConfigError("no admissible cells", "lattice.fov_side")
    cols = sorted({c.col for c in cells})
    rows = sorted({c.row for c in cells})
    aspect = len(cols) / len(rows)
    best = None
    for nr in range(1, count + 1):
        nc = math.ceil(count / nr)
        score = (nc * nr - count, abs(math.log((nc / nr) / aspect)))
        if best is None or score < best[0]:
            best = (score, nc, nr)
    _, nc, nr = best

    def pick(values, n, i):
        lo, hi = values[0], values[-1]
        return int(round(lo + (i + 0.5) * (hi - lo + 1) / n - 0.5))

    out = []
    for r in range(nr):
        for c in range(nc):
            if len(out) < count:
                out.append(CellIndex(pick(cols, nc, c), pick(rows, nr, r)))
    return tuple(out)


_TOP_KEYS = {
    "zone", "lattice", "sources", "arrival_rate", "target_speed", "sensors",
    "horizon", "steps", "strategy", "replan", "seed", "quadrature_n", "bin_width",
}


def _reject_unknown(section: dict, allowed: set[str], prefix: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError("unknown key", f"{prefix}{key}")


def _num(section: dict, key: str, prefix: str, kind=float, default: Any = ...) -> Any:
    if key not in section:
        if default is ...:
            raise ConfigError("missing required key", prefix + key)
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", prefix + key)
    if kind is int:
        if value != int(value):
            raise ConfigError(f"expected an integer, got {value!r}", prefix + key)
        return int(value)
    return float(value)


def _mapping(raw: Any, key: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("expected a mapping", key)
    return raw


def from_dict(raw: dict) -> ScenarioConfig:
    raw = _mapping(raw, "<root>")
    _reject_unknown(raw, _TOP_KEYS, "")

    z = _mapping(raw.get("zone"), "zone")
    _reject_unknown(z, {"width", "height", "origin"}, "zone.")
    origin = z.get("origin", [0.0, 0.0])
    if not (isinstance(origin, (list, tuple)) and len(origin) == 2):
        raise ConfigError("expected [x, y]", "zone.origin")
    try:
        zone = ZoneSpec(_num(z, "width", "zone."), _num(z, "height", "zone."), (float(origin[0]), float(origin[1])))
    except ValueError as exc:
        raise ConfigError(str(exc), "zone.width") from exc

    lat = _mapping(raw.get("lattice"), "lattice")
    _reject_unknown(lat, {"cell_size", "fov_side"}, "lattice.")
    cell_size = _num(lat, "cell_size", "lattice.")
    fov_side = _num(lat, "fov_side", "lattice.")

    rate = _num(raw, "arrival_rate", "", default=0.3)
    if rate < 0:
        raise ConfigError("must be non-negative", "arrival_rate")
    speed = _num(raw, "target_speed", "", default=10.0)

    src = raw.get("sources", {"layout": "perimeter"})
    if isinstance(src, dict):
        _reject_unknown(src, {"layout", "count", "offset"}, "sources.")
        if src.get("layout", "perimeter") != "perimeter":
            raise ConfigError(f"unknown layout {src.get('layout')!r}", "sources.layout")
        sources = perimeter_sources(
            zone, _num(src, "count", "sources.", int, 8), _num(src, "offset", "sources.", float, 10.0), rate
        )
    elif isinstance(src, list):
        sources = []
        for i, s in enumerate(src):
            prefix = f"sources[{i}]."
            s = _mapping(s, prefix[:-1])
            _reject_unknown(s, {"position", "facing", "rate"}, prefix)
            pos = s.get("position")
            if not (isinstance(pos, (list, tuple)) and len(pos) == 2):
                raise ConfigError("expected [x, y]", prefix + "position")
            try:
                facing = Facing(s.get("facing"))
            except ValueError as exc:
                raise ConfigError(f"expected one of {[f.value for f in Facing]}", prefix + "facing") from exc
            try:
                sources.append(SourceSpec((float(pos[0]), float(pos[1])), facing, _num(s, "rate", prefix, default=rate)))
            except ValueError as exc:
                raise ConfigError(str(exc), prefix + "rate") from exc
        sources = tuple(sources)
    else:
        raise ConfigError("expected a layout mapping or a list of sources", "sources")

    sens = _mapping(raw.get("sensors", {}), "sensors")
    _reject_unknown(sens, {"count", "cells"}, "sensors.")
    cells = sens.get("cells")
    if cells is None:
        count = _num(sens, "count", "sensors.", int, 10)
        if count < 1:
            raise ConfigError("need at least one sensor", "sensors.count")
        try:
            lattice = LatticeSpec(zone, cell_size, fov_side)
        except ValueError as exc:
            raise ConfigError(str(exc), "lattice.fov_side/lattice.cell_size") from exc
        sensor_cells = spread_sensors(lattice, count)
    else:
        if not isinstance(cells, list) or not all(isinstance(c, (list, tuple)) and len(c) == 2 for c in cells):
            raise ConfigError("expected a list of [col, row]", "sensors.cells")
        sensor_cells = tuple(CellIndex(int(c[0]), int(c[1])) for c in cells)
        if "count" in sens and sens["count"] != len(sensor_cells):
            raise ConfigError("count disagrees with the number of cells", "sensors.count")

    cfg = ScenarioConfig(
        zone=zone,
        cell_size=cell_size,
        fov_side=fov_side,
        sources=sources,
        arrival_rate=rate,
        target_speed=speed,
        sensor_cells=sensor_cells,
        horizon=_num(raw, "horizon", "", int, 3),
        steps=_num(raw, "steps", "", int, 150),
        strategy=raw.get("strategy", "t-step-coordinated"),
        replan=raw.get("replan", "every-horizon"),
        seed=_num(raw, "seed", "", int, 0),
        quadrature_n=_num(raw, "quadrature_n", "", int, DEFAULT_QUADRATURE_N),
        bin_width=_num(raw, "bin_width", "", float, DEFAULT_BIN_WIDTH),
    )
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    if cfg.cell_size <= 0:
        raise ConfigError("must be positive", "lattice.cell_size")
    if cfg.fov_side < cfg.cell_size:
        raise ConfigError(
            f"fov_side ({cfg.fov_side}) must be >= cell_size ({cfg.cell_size})", "lattice.fov_side/lattice.cell_size"
        )
    try:
        lattice = cfg.lattice
    except ValueError as exc:
        raise ConfigError(str(exc), "lattice.cell_size") from exc
    if not lattice.admissible_cells():
        raise ConfigError("FOV square does not fit inside the zone anywhere", "lattice.fov_side")
    for i, s in enumerate(cfg.sources):
        try:
            s.check_outside(cfg.zone)
        except ValueError as exc:
            raise ConfigError(str(exc), f"sources[{i}].position") from exc
    for i, c in enumerate(cfg.sensor_cells):
        if not lattice.is_admissible(c):
            raise ConfigError(f"cell {list(c)} is not admissible", f"sensors.cells[{i}]")
    if cfg.target_speed <= 0:
        raise ConfigError("must be positive", "target_speed")
    if cfg.arrival_rate < 0:
        raise ConfigError("must be non-negative", "arrival_rate")
    if cfg.horizon < 1:
        raise ConfigError("must be >= 1", "horizon")
    if cfg.steps < 1:
        raise ConfigError("must be >= 1", "steps")
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {cfg.strategy!r}; expected one of {list(STRATEGIES)}", "strategy")
    if cfg.replan not in REPLAN_MODES:
        raise ConfigError(f"expected one of {list(REPLAN_MODES)}", "replan")
    if cfg.seed < 0:
        raise ConfigError("must be >= 0", "seed")
    if cfg.quadrature_n < 2:
        raise ConfigError("must be >= 2", "quadrature_n")
    if cfg.bin_width <= 0:
        raise ConfigError("must be positive", "bin_width")


def parse_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file not found: {path}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return from_dict(raw if raw is not None else {})


def to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "zone": {"width": cfg.zone.width, "height": cfg.zone.height, "origin": list(cfg.zone.origin)},
        "lattice": {"cell_size": cfg.cell_size, "fov_side": cfg.fov_side},
        "arrival_rate": cfg.arrival_rate,
        "target_speed": cfg.target_speed,
        "sources": [
            {"position": list(s.position), "facing": s.facing.value, "rate": s.rate} for s in cfg.sources
        ],
        "sensors": {"count": cfg.n_sensors, "cells": [list(c) for c in cfg.sensor_cells]},
        "horizon": cfg.horizon,
        "steps": cfg.steps,
        "strategy": cfg.strategy,
        "replan": cfg.replan,
        "seed": cfg.seed,
        "quadrature_n": cfg.quadrature_n,
        "bin_width": cfg.bin_width,
    }


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def default_scenario_path() -> Path:
    return Path(__file__).resolve().parent / "scenarios" / "default.yaml"


def load_default() -> ScenarioConfig:
    return parse_scenario(default_scenario_path())
