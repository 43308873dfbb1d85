import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chebyshev_domain, shapely_chords
from tstep_surveillance.geometry import (
    CellIndex,
    Facing,
    LatticeSpec,
    SourceSpec,
    ZoneSpec,
    fov_square,
    overlap_fraction,
)
from tstep_surveillance.estimator import (
    TargetObservation,
    build_value_lattice,
    node_value,
    statistical_term,
    surviving_count,
)
from tstep_surveillance.lattice_stats import precompute_all

CENTRE = CellIndex(26, 19)


def random_observations(rng, n, lattice, speed=10.0):
    w, h = lattice.zone.width, lattice.zone.height
    pos = rng.uniform([0, 0], [w, h], size=(n, 2))
    ang = rng.uniform(0, 2 * math.pi, n)
    vel = speed * np.stack([np.cos(ang), np.sin(ang)], -1)
    return [TargetObservation(tuple(p), tuple(v)) for p, v in zip(pos, vel)]


class TestSurvivingCount:
    def test_empty(self, default_cfg):
        assert surviving_count([], CENTRE, 3, default_cfg.lattice) == 0

    def test_target_at_centre_stays(self, default_cfg):
        lat = default_cfg.lattice
        obs = [TargetObservation(lat.center(CENTRE), (0.0, 0.0))]
        assert surviving_count(obs, CENTRE, 3, lat) == 1

    def test_target_leaving(self, default_cfg):
        lat = default_cfg.lattice
        cx, cy = lat.center(CENTRE)
        obs = [TargetObservation((cx + 35, cy), (10.0, 0.0))]
        assert surviving_count(obs, CENTRE, 1, lat) == 0

    def test_bad_t(self, default_cfg):
        with pytest.raises(ValueError):
            surviving_count([], CENTRE, 0, default_cfg.lattice)

    def test_matches_per_target_check(self, default_cfg):
        lat = default_cfg.lattice
        rng = np.random.default_rng(3)
        cells = lat.admissible_cells()
        for _ in range(200):
            obs = random_observations(rng, 5, lat)
            dest = cells[rng.integers(len(cells))]
            cx, cy = lat.center(dest)
            h = lat.fov_side / 2
            expected = 0
            for o in obs:
                x = o.position[0] + 3 * o.velocity[0]
                y = o.position[1] + 3 * o.velocity[1]
                expected += int(cx - h <= x <= cx + h and cy - h <= y <= cy + h)
            assert surviving_count(obs, dest, 3, lat) == expected


class TestStatisticalTerm:
    def test_no_arrivals(self):
        lat = LatticeSpec(ZoneSpec(200, 200), 10, 40)
        quiet = [SourceSpec((100, -10), Facing.NORTH, 0.0)]
        stats = precompute_all(lat, quiet, 10, quadrature_n=256)
        assert statistical_term(stats[CellIndex(10, 10)], 3) == 0.0

    def test_before_any_escape(self):
        lat = LatticeSpec(ZoneSpec(200, 200), 10, 40)
        # two midpoint rays from a distant source both cross the full 40 unit square
        far = [SourceSpec((100, -2000), Facing.NORTH, 0.3)]
        stats = precompute_all(lat, far, 10, quadrature_n=2)
        cs = stats[CellIndex(10, 10)]
        assert cs.per_source_cdfs[0].t_a > 3
        for t in (1, 2, 3, 4):
            assert statistical_term(cs, t) == cs.arrival_rate * t

    def test_t_one_is_arrival_rate(self, default_stats):
        cs = default_stats[CENTRE]
        assert statistical_term(cs, 1) == cs.arrival_rate

    def test_matches_monte_carlo(self, default_cfg, default_stats):
        """Arrivals in steps 1..t minus those that escaped by t, simulated directly."""
        cfg, cs = default_cfg, default_stats[CENTRE]
        sq = fov_square(CENTRE, cfg.lattice)
        t, trials = 3, 10**5
        rng = np.random.default_rng(17)
        counts = np.zeros(trials)
        for j, src in enumerate(cfg.sources):
            rate, span = cs.per_source_rates[j], cs.per_source_spans[j]
            if rate == 0:
                continue
            for s in range(1, t + 1):
                n = rng.poisson(rate, trials)
                total = int(n.sum())
                angles = rng.uniform(span.delta, span.upper, total)
                te = shapely_chords(src, angles, sq) / cfg.target_speed
                stay = (te > t - s).astype(float)
                owner = np.repeat(np.arange(trials), n)
                counts += np.bincount(owner, weights=stay, minlength=trials)
        mean, se = counts.mean(), counts.std(ddof=1) / math.sqrt(trials)
        assert abs(statistical_term(cs, t) - mean) <= 3 * se


class TestNodeValue:
    def test_same_cell_collapses(self, default_cfg, default_stats):
        lat = default_cfg.lattice
        obs = random_observations(np.random.default_rng(0), 40, lat)
        for t in (1, 2, 3):
            v = node_value(obs, CENTRE, CENTRE, t, default_stats, lat)
            ref = surviving_count(obs, CENTRE, t, lat) + statistical_term(default_stats[CENTRE], t)
            assert abs(v - max(0.0, ref)) <= 1e-12

    def test_disjoint_fov_is_stationary_value(self, default_cfg, default_stats):
        lat = default_cfg.lattice
        far = CellIndex(CENTRE.col + 9, CENTRE.row)
        assert overlap_fraction(CENTRE, far, lat) == 0
        v = node_value([], CENTRE, far, 9, default_stats, lat)
        assert v == default_stats[far].expected_detections

    def test_half_overlap_blend(self, default_cfg, default_stats):
        lat = default_cfg.lattice
        dest = CellIndex(CENTRE.col + 4, CENTRE.row)
        assert overlap_fraction(CENTRE, dest, lat) == 0.5
        obs = random_observations(np.random.default_rng(9), 60, lat)
        stat = statistical_term(default_stats[CENTRE], 4)
        n = surviving_count(obs, dest, 4, lat)
        expected = n + 0.5 * stat + 0.5 * default_stats[dest].expected_detections
        assert node_value(obs, CENTRE, dest, 4, default_stats, lat) == pytest.approx(max(0, expected), abs=1e-12)

    def test_preconditions(self, default_cfg, default_stats):
        lat = default_cfg.lattice
        with pytest.raises(ValueError):
            node_value([], CENTRE, CENTRE, 0, default_stats, lat)
        with pytest.raises(ValueError):
            node_value([], CENTRE, CellIndex(CENTRE.col + 3, CENTRE.row), 2, default_stats, lat)
        with pytest.raises(ValueError):
            node_value([], CENTRE, CellIndex(0, 0), 40, default_stats, lat)

    def test_monotone_before_escape(self):
        lat = LatticeSpec(ZoneSpec(200, 200), 10, 40)
        stats = precompute_all(lat, [SourceSpec((100, -2000), Facing.NORTH, 0.3)], 10, quadrature_n=2)
        c = CellIndex(10, 10)
        t_a = stats[c].per_source_cdfs[0].t_a
        assert t_a > 3
        prev = -1.0
        for t in range(1, 10):
            if t - 1 >= t_a:
                break
            v = node_value([], c, c, t, stats, lat)
            assert v >= prev
            prev = v


class TestValueLattice:
    def test_domain_sizes(self, default_cfg, default_stats):
        vl = build_value_lattice(CENTRE, [], 3, default_stats, default_cfg.lattice)
        sizes = [sum(1 for (_, t) in vl.values if t == k) for k in (1, 2, 3)]
        assert sizes == [9, 25, 49]
        assert set(vl.values) == set(chebyshev_domain(CENTRE, 3))

    def test_domain_truncated_at_boundary(self, default_cfg, default_stats):
        lat = default_cfg.lattice
        corner = min(lat.admissible_cells())
        vl = build_value_lattice(corner, [], 3, default_stats, lat)
        assert set(vl.values) == set(chebyshev_domain(corner, 3, keep=lat.is_admissible))

    def test_null_world(self):
        lat = LatticeSpec(ZoneSpec(200, 200), 10, 40)
        stats = precompute_all(lat, [SourceSpec((100, -10), Facing.NORTH, 0.0)], 10, quadrature_n=64)
        vl = build_value_lattice(CellIndex(10, 10), [], 3, stats, lat)
        assert all(v == 0 for v in vl.values.values())

    def test_all_values_finite_non_negative(self, default_cfg, default_stats):
        lat = default_cfg.lattice
        obs = random_observations(np.random.default_rng(1), 80, lat)
        for cell in lat.admissible_cells()[::37]:
            vl = build_value_lattice(cell, obs, 3, default_stats, lat)
            vals = np.array(list(vl.values.values()))
            assert np.all(np.isfinite(vals)) and np.all(vals >= 0)

    def test_recomputation_identical(self, default_cfg, default_stats):
        lat = default_cfg.lattice
        obs = random_observations(np.random.default_rng(2), 50, lat)
        a = build_value_lattice(CENTRE, obs, 3, default_stats, lat)
        default_stats.stat_term_cache.clear()
        b = build_value_lattice(CENTRE, obs, 3, default_stats, lat)
        assert a.values == b.values

    def test_bad_inputs(self, default_cfg, default_stats):
        with pytest.raises(ValueError):
            build_value_lattice(CENTRE, [], 0, default_stats, default_cfg.lattice)
        with pytest.raises(ValueError):
            build_value_lattice(CellIndex(0, 0), [], 3, default_stats, default_cfg.lattice)

    def test_csv_dump(self, default_cfg, default_stats, tmp_path):
        vl = build_value_lattice(CENTRE, [], 2, default_stats, default_cfg.lattice)
        path = tmp_path / "vl.csv"
        vl.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "cell_col,cell_row,t,value"
        assert len(lines) == 1 + 9 + 25


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 30), t=st.integers(1, 3))
def test_collapse_property(default_cfg, default_stats, seed, n, t):
    lat = default_cfg.lattice
    rng = np.random.default_rng(seed)
    cells = lat.admissible_cells()
    c = cells[rng.integers(len(cells))]
    obs = random_observations(rng, n, lat)
    ref = surviving_count(obs, c, t, lat) + statistical_term(default_stats[c], t)
    assert abs(node_value(obs, c, c, t, default_stats, lat) - max(0.0, ref)) <= 1e-12
