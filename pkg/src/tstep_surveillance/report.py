"""Table-style CSV reports and multi-strategy comparisons."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field
from typing import Sequence

from .config import STRATEGIES, ConfigError, ScenarioConfig
from .lattice_stats import StatsTable
from .simulator import ExperimentSummary, run_experiment

COLUMNS = ("EN", "NS", "AD", "ZD", "AF", "D1S", "D2S", "D3S", "TV")
DIFF_COLUMNS = (
    "strategy", "base", "seeds",
    "dAF_mean", "dAF_std", "dD2S_mean", "dD2S_std",
    "AF_std", "D2S_std", "dAF_pos_frac", "dD2S_neg_frac",
)


def _fmt(x: float) -> str:
    return f"{x:.4f}"


@dataclass(frozen=True)
class ReportRow:
    label: str
    NS: int
    AD: float
    ZD: float
    AF: float
    D1S: float
    D2S: float
    D3S: float
    TV: float

    def cells(self) -> list[str]:
        return [self.label, str(self.NS)] + [_fmt(v) for v in (self.AD, self.ZD, self.AF, self.D1S, self.D2S, self.D3S)] + [
            f"{self.TV:g}"
        ]

    @classmethod
    def from_summary(cls, label: str, s: ExperimentSummary) -> "ReportRow":
        return cls(label, s.NS, s.AD, s.ZD, s.AF, s.D1S, s.D2S, s.D3S, s.TV)


@dataclass
class StrategyStats:
    strategy: str
    runs: list[ExperimentSummary]

    def mean(self, attr: str) -> float:
        return statistics.fmean(getattr(r, attr) for r in self.runs)

    def std(self, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.runs]
        return statistics.stdev(vals) if len(vals) > 1 else 0.0


@dataclass
class ComparisonReport:
    rows: list[ReportRow]
    strategies: list[StrategyStats]
    base: str
    checksums: list[tuple[int, str]] = field(default_factory=list)

    def differences(self) -> list[dict]:
        """Paired (per-seed) differences of every strategy against the base."""
        if len(self.strategies) < 2:
            return []
        base = next(s for s in self.strategies if s.strategy == self.base)
        out = []
        for s in self.strategies:
            if s is base:
                continue
            d_af = [a.AF - b.AF for a, b in zip(s.runs, base.runs)]
            d_d2 = [a.D2S - b.D2S for a, b in zip(s.runs, base.runs)]
            n = len(d_af)
            out.append(
                {
                    "strategy": s.strategy,
                    "base": base.strategy,
                    "seeds": n,
                    "dAF_mean": statistics.fmean(d_af),
                    "dAF_std": statistics.stdev(d_af) if n > 1 else 0.0,
                    "dD2S_mean": statistics.fmean(d_d2),
                    "dD2S_std": statistics.stdev(d_d2) if n > 1 else 0.0,
                    "AF_std": s.std("AF"),
                    "D2S_std": s.std("D2S"),
                    "dAF_pos_frac": sum(d > 0 for d in d_af) / n,
                    "dD2S_neg_frac": sum(d < 0 for d in d_d2) / n,
                }
            )
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in self.rows:
            w.writerow(row.cells())
        for row, s in zip(self.rows, self.strategies):
            buf.write(f"# {row.label} = {s.strategy} ({len(s.runs)} seeds)\n")
        for seed, digest in self.checksums:
            buf.write(f"# stream seed={seed} sha256={digest}\n")
        return buf.getvalue()

    def diff_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DIFF_COLUMNS)
        for d in self.differences():
            w.writerow([d[c] if isinstance(d[c], (str, int)) else _fmt(d[c]) for c in DIFF_COLUMNS])
        return buf.getvalue()


def summary_csv(summary: ExperimentSummary, label: str = "1") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    w.writerow(ReportRow.from_summary(label, summary).cells())
    return buf.getvalue()


def compare(
    cfg: ScenarioConfig,
    stats: StatsTable,
    strategies: Sequence[str],
    seeds: Sequence[int],
    base: str | None = None,
) -> ComparisonReport:
    """Run every strategy on every seed; non-base runs replay the base's traffic."""
    if not strategies:
        raise ConfigError("at least one strategy is required", "strategy")
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; expected one of {list(STRATEGIES)}", "strategy")
    base = base or strategies[0]
    if base not in strategies:
        raise ConfigError(f"base strategy {base!r} is not among the compared strategies", "base-strategy")

    runs: dict[int, list[ExperimentSummary]] = {i: [] for i in range(len(strategies))}
    base_idx = strategies.index(base)
    checksums = []
    for seed in seeds:
        base_run = run_experiment(cfg, stats, strategy=base, seed=seed)
        stream = base_run.spawn_records
        checksums.append((seed, base_run.summary.stream_checksum))
        for i, strategy in enumerate(strategies):
            if i == base_idx:
                runs[i].append(base_run.summary)
                continue
            result = run_experiment(cfg, stats, strategy=strategy, seed=seed, spawn_stream=stream)
            if result.summary.stream_checksum != base_run.summary.stream_checksum:
                raise RuntimeError(f"seed {seed}: {strategy} consumed a different spawn stream than the base")
            runs[i].append(result.summary)

    groups = [StrategyStats(s, runs[i]) for i, s in enumerate(strategies)]
    rows = []
    for i, g in enumerate(groups):
        ad, zd = g.mean("AD"), g.mean("ZD")
        rows.append(
            ReportRow(
                label=f"1{chr(ord('a') + i)}",
                NS=cfg.n_sensors,
                AD=ad,
                ZD=zd,
                AF=g.mean("AF"),
                D1S=g.mean("D1S"),
                D2S=g.mean("D2S"),
                D3S=g.mean("D3S"),
                TV=cfg.target_speed,
            )
        )
    return ComparisonReport(rows, groups, base, checksums)

