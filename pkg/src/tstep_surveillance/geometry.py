"""Planar geometry for the surveillance zone.

Covers the cell lattice, sensor field-of-view squares, the angular span of a
FOV square seen from a target source, ray/square chord transit times and the
overlap fraction between two FOV squares.

Source angular frame
--------------------
Every source emits into the half-plane that contains the zone.  A takeoff
angle ``a`` in ``[0, pi]`` maps to the direction ``cos(a) * u + sin(a) * n``
where ``n`` is the inward normal of the half-plane boundary and ``u`` is the
boundary direction along the positive lattice axis:

========  ==========  ===========
facing    u (a = 0)   n (a = pi/2)
========  ==========  ===========
north     (+1, 0)     (0, +1)
south     (+1, 0)     (0, -1)
east      (0, +1)     (+1, 0)
west      (0, +1)     (-1, 0)
========  ==========  ===========
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np


class Facing(str, Enum):
    NORTH = "north"
    SOUTH = "south"
    EAST = "east"
    WEST = "west"


_FRAMES: dict[Facing, tuple[tuple[float, float], tuple[float, float]]] = {
    Facing.NORTH: ((1.0, 0.0), (0.0, 1.0)),
    Facing.SOUTH: ((1.0, 0.0), (0.0, -1.0)),
    Facing.EAST: ((0.0, 1.0), (1.0, 0.0)),
    Facing.WEST: ((0.0, 1.0), (-1.0, 0.0)),
}

# Canonical move order used everywhere a neighbourhood is enumerated.
MOVES: tuple[tuple[int, int], ...] = (
    (0, 0),    # stay
    (0, 1),    # N
    (1, 1),    # NE
    (1, 0),    # E
    (1, -1),   # SE
    (0, -1),   # S
    (-1, -1),  # SW
    (-1, 0),   # W
    (-1, 1),   # NW
)


class CellIndex(NamedTuple):
    col: int
    row: int


@dataclass(frozen=True)
class ZoneSpec:
    width: float
    height: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"zone width/height must be positive, got {self.width}x{self.height}")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, y0, x0 + self.width, y0 + self.height

    def contains(self, x, y):
        """Closed-rectangle containment; works elementwise on arrays."""
        x0, y0, x1, y1 = self.bounds
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


@dataclass(frozen=True)
class Square:
    cx: float
    cy: float
    side: float

    @property
    def half(self) -> float:
        return 0.5 * self.side

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        h = self.half
        return self.cx - h, self.cy - h, self.cx + h, self.cy + h

    @property
    def vertices(self) -> list[tuple[float, float]]:
        x0, y0, x1, y1 = self.bounds
        return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]

    def contains(self, x, y):
        """Closed-square containment; works elementwise on arrays."""
        h = self.half
        return (np.abs(x - self.cx) <= h) & (np.abs(y - self.cy) <= h)


@dataclass(frozen=True)
class LatticeSpec:
    zone: ZoneSpec
    cell_size: float
    fov_side: float

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.fov_side < self.cell_size:
            raise ValueError(
                f"fov_side ({self.fov_side}) must be >= cell_size ({self.cell_size})"
            )
        for name, extent in (("width", self.zone.width), ("height", self.zone.height)):
            n = extent / self.cell_size
            if abs(n - round(n)) > 1e-9:
                raise ValueError(f"zone {name} {extent} is not a multiple of cell_size {self.cell_size}")

    @property
    def n_cols(self) -> int:
        return int(round(self.zone.width / self.cell_size))

    @property
    def n_rows(self) -> int:
        return int(round(self.zone.height / self.cell_size))

    def in_range(self, cell: CellIndex) -> bool:
        return 0 <= cell[0] < self.n_cols and 0 <= cell[1] < self.n_rows

    def check(self, cell: CellIndex) -> None:
        if not self.in_range(cell):
            raise IndexError(f"cell {tuple(cell)} outside {self.n_cols}x{self.n_rows} lattice")

    def center(self, cell: CellIndex) -> tuple[float, float]:
        self.check(cell)
        x0, y0 = self.zone.origin
        return x0 + (cell[0] + 0.5) * self.cell_size, y0 + (cell[1] + 0.5) * self.cell_size

    def is_admissible(self, cell: CellIndex) -> bool:
        """True when the cell's FOV square lies entirely inside the zone."""
        if not self.in_range(cell):
            return False
        sx0, sy0, sx1, sy1 = fov_square(cell, self).bounds
        zx0, zy0, zx1, zy1 = self.zone.bounds
        eps = 1e-9 * max(self.zone.width, self.zone.height)
        return sx0 >= zx0 - eps and sy0 >= zy0 - eps and sx1 <= zx1 + eps and sy1 <= zy1 + eps

    def admissible_cells(self) -> list[CellIndex]:
        """Admissible cells in row-major order (row, then col)."""
        return [
            CellIndex(c, r)
            for r in range(self.n_rows)
            for c in range(self.n_cols)
            if self.is_admissible(CellIndex(c, r))
        ]


@dataclass(frozen=True)
class SourceSpec:
    position: tuple[float, float]
    facing: Facing
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "facing", Facing(self.facing))
        if self.rate < 0:
            raise ValueError(f"source rate must be >= 0, got {self.rate}")

    def frame(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return _FRAMES[self.facing]

    def direction(self, angle):
        """Unit direction(s) for takeoff angle(s); returns (dx, dy)."""
        (ux, uy), (nx, ny) = self.frame()
        c, s = np.cos(angle), np.sin(angle)
        return c * ux + s * nx, c * uy + s * ny

    def check_outside(self, zone: ZoneSpec) -> None:
        px, py = self.position
        x0, y0, x1, y1 = zone.bounds
        if x0 <= px <= x1 and y0 <= py <= y1:
            raise ValueError(f"source at {self.position} is not strictly outside the zone")
        # the zone must sit in the facing half-plane
        (_, _), (nx, ny) = self.frame()
        corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        if min((cx - px) * nx + (cy - py) * ny for cx, cy in corners) < 0:
            raise ValueError(f"zone is not inside the {self.facing.value} half-plane of source {self.position}")


@dataclass(frozen=True)
class AngularSpan:
    delta: float
    theta: float

    @property
    def upper(self) -> float:
        return self.delta + self.theta


def fov_square(cell: CellIndex, lattice: LatticeSpec) -> Square:
    cx, cy = lattice.center(cell)
    return Square(cx, cy, lattice.fov_side)


def _local(source: SourceSpec, x: float, y: float) -> tuple[float, float]:
    (ux, uy), (nx, ny) = source.frame()
    dx, dy = x - source.position[0], y - source.position[1]
    return dx * ux + dy * uy, dx * nx + dy * ny


def angular_span(source: SourceSpec, square: Square) -> AngularSpan:
    """Range of takeoff angles whose rays intersect ``square``.

    The square is clipped to the source's closed half-plane first, so a
    square straddling the boundary line gets an exact span touching 0 or pi.
    """
    px, py = source.position
    if square.contains(px, py):
        raise ValueError(f"source {source.position} lies inside the FOV square")

    pts = [_local(source, x, y) for x, y in square.vertices]
    # Sutherland-Hodgman clip against v >= 0
    clipped: list[tuple[float, float]] = []
    for i, (u1, v1) in enumerate(pts):
        u0, v0 = pts[i - 1]
        if v1 >= 0:
            if v0 < 0:
                clipped.append((u0 + (u1 - u0) * (-v0) / (v1 - v0), 0.0))
            clipped.append((u1, v1))
        elif v0 >= 0:
            clipped.append((u0 + (u1 - u0) * (-v0) / (v1 - v0), 0.0))

    if not clipped:
        return AngularSpan(0.0, 0.0)
    angles = []
    for u, v in clipped:
        if u == 0.0 and v == 0.0:
            continue
        angles.append(math.atan2(v, u) if v > 0 else (0.0 if u > 0 else math.pi))
    if not angles:
        return AngularSpan(0.0, 0.0)
    lo = min(max(min(angles), 0.0), math.pi)
    hi = min(max(max(angles), 0.0), math.pi)
    return AngularSpan(lo, hi - lo)


def ray_square_chord(px, py, dx, dy, square: Square):
    """Chord length of rays ``p + s*d`` (s >= 0, |d| = 1) through a square.

    Vectorised over ``dx``/``dy``.  Returns ``nan`` where the ray misses.
    """
    t_in, t_out = ray_box_interval(px, py, dx, dy, square.bounds)
    return np.where(t_out >= t_in, t_out - t_in, np.nan)


def ray_box_interval(px, py, dx, dy, bounds):
    """Entry/exit ray parameters ``(t_in, t_out)`` for an axis-aligned box.

    ``t_in`` is clamped at 0; the ray misses wherever ``t_out < t_in``.
    """
    x0, y0, x1, y1 = bounds
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx0 = (x0 - px) / dx
        tx1 = (x1 - px) / dx
        ty0 = (y0 - py) / dy
        ty1 = (y1 - py) / dy
    # zero components: slab either always satisfied or never
    inside_x = (x0 <= px) & (px <= x1)
    inside_y = (y0 <= py) & (py <= y1)
    tminx = np.where(dx == 0, np.where(inside_x, -np.inf, np.inf), np.minimum(tx0, tx1))
    tmaxx = np.where(dx == 0, np.where(inside_x, np.inf, -np.inf), np.maximum(tx0, tx1))
    tminy = np.where(dy == 0, np.where(inside_y, -np.inf, np.inf), np.minimum(ty0, ty1))
    tmaxy = np.where(dy == 0, np.where(inside_y, np.inf, -np.inf), np.maximum(ty0, ty1))
    t_in = np.maximum(np.maximum(tminx, tminy), 0.0)
    t_out = np.minimum(tmaxx, tmaxy)
    return t_in, t_out


def transit_time(source: SourceSpec, takeoff_angle: float, square: Square, speed: float) -> float | None:
    """Time a target on the given takeoff ray spends inside ``square``."""
    if speed <= 0:
        raise ValueError(f"speed must be positive, got {speed}")
    dx, dy = source.direction(takeoff_angle)
    chord = float(ray_square_chord(source.position[0], source.position[1], dx, dy, square))
    if math.isnan(chord):
        return None
    return chord / speed


def transit_times(source: SourceSpec, angles: np.ndarray, square: Square, speed: float) -> np.ndarray:
    """Vectorised :func:`transit_time`; misses come back as ``nan``."""
    if speed <= 0:
        raise ValueError(f"speed must be positive, got {speed}")
    dx, dy = source.direction(np.asarray(angles, dtype=float))
    return ray_square_chord(source.position[0], source.position[1], dx, dy, square) / speed


def overlap_fraction(cell_a: CellIndex, cell_b: CellIndex, lattice: LatticeSpec) -> float:
    ax, ay = lattice.center(cell_a)
    bx, by = lattice.center(cell_b)
    side = lattice.fov_side
    ox = max(0.0, side - abs(ax - bx))
    oy = max(0.0, side - abs(ay - by))
    return (ox * oy) / (side * side)


def chebyshev(a: CellIndex, b: CellIndex) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def neighbors9(cell: CellIndex, lattice: LatticeSpec) -> list[CellIndex]:
    """The cell itself plus its 8-neighbours, admissible only, canonical order."""
    lattice.check(cell)
    out = []
    for dc, dr in MOVES:
        nb = CellIndex(cell[0] + dc, cell[1] + dr)
        if lattice.is_admissible(nb):
            out.append(nb)
    return out
