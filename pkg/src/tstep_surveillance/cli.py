"""Command-line harness: ``precompute``, ``run``, ``compare`` and ``replay``.

Exit codes: 0 success, 1 usage, 2 configuration/validation, 3 runtime.
"""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import ExitStack
from pathlib import Path

import numpy as np

from .config import REPLAN_MODES, STRATEGIES, ConfigError, ScenarioConfig, default_scenario_path, parse_scenario
from .lattice_stats import StatsCacheError, StatsTable, load_stats, precompute_all, save_stats
from .report import compare, summary_csv
from .simulator import PLANNING_STRATEGIES, SimulationError, run_experiment
from .streams import StreamError, read_stream, write_stream

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("tstep_surveillance")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_cache_path(cfg: ScenarioConfig) -> Path:
    return Path(".tstep_cache") / f"stats-{cfg.fingerprint()[:16]}.bin"


def obtain_stats(cfg: ScenarioConfig, cache: str | None) -> tuple[StatsTable, bool]:
    """Load the cache for ``cfg`` or build it.

    An explicit ``cache`` path whose fingerprint does not match is an error;
    the default fingerprint-named location is built on demand.
    """
    if cache is not None:
        path = Path(cache)
        if path.exists():
            return load_stats(path, expected_fingerprint=cfg.fingerprint()), True
    else:
        path = default_cache_path(cfg)
        if path.exists():
            try:
                return load_stats(path, expected_fingerprint=cfg.fingerprint()), True
            except StatsCacheError:
                log.warning("ignoring unreadable cache %s", path)
    table = precompute_all(cfg.lattice, cfg.sources, cfg.target_speed, cfg.quadrature_n, cfg.bin_width)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_stats(table, path)
    return table, False


def _load_cfg(args) -> ScenarioConfig:
    cfg = parse_scenario(args.scenario or default_scenario_path())
    return cfg.with_overrides(
        seed=getattr(args, "seed", None),
        steps=getattr(args, "steps", None),
        horizon=getattr(args, "horizon", None),
        replan=getattr(args, "replan", None),
    )


def cmd_precompute(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out or args.stats_cache or default_cache_path(cfg))
    table = None
    if out.exists():
        try:
            table = load_stats(out, expected_fingerprint=cfg.fingerprint())
            print(f"cache hit: {out} (fingerprint {cfg.fingerprint()[:16]})")
        except StatsCacheError as exc:
            print(f"cache miss: {exc}; rebuilding")
    if table is None:
        table = precompute_all(cfg.lattice, cfg.sources, cfg.target_speed, cfg.quadrature_n, cfg.bin_width)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_stats(table, out)
        print(f"wrote {out} ({len(table)} cells, fingerprint {table.fingerprint[:16]})")
    d = np.array([c.expected_detections for c in table.cells.values()])
    print(f"expected detections per cell: min={d.min():.4f} mean={d.mean():.4f} max={d.max():.4f}")
    return EXIT_OK


def _run(args, replay_path: str | None) -> int:
    cfg = _load_cfg(args)
    strategy = args.strategy or cfg.strategy
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {list(STRATEGIES)}", "strategy")
    stats = obtain_stats(cfg, args.stats_cache)[0] if strategy in PLANNING_STRATEGIES else None
    stream = read_stream(replay_path) if replay_path else None
    with ExitStack() as stack:
        step_log = stack.enter_context(open(args.log, "w")) if args.log else None
        trace = stack.enter_context(open(args.trace, "w")) if args.trace else None
        result = run_experiment(cfg, stats, strategy=strategy, spawn_stream=stream, step_log=step_log, plan_trace=trace)
    if args.record:
        write_stream(result.spawn_records, args.record)
    text = summary_csv(result.summary)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args) -> int:
    return _run(args, args.replay)


def cmd_replay(args) -> int:
    return _run(args, args.replay)


def cmd_compare(args) -> int:
    cfg = _load_cfg(args)
    strategies = args.strategy or ["t-step-coordinated", "t-step-uncoordinated"]
    stats = None
    if any(s in PLANNING_STRATEGIES for s in strategies):
        stats = obtain_stats(cfg, args.stats_cache)[0]
    seeds = [cfg.seed + i for i in range(args.seeds)]
    report = compare(cfg, stats, strategies, seeds, base=args.base_strategy)
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text)
        if report.differences():
            Path(str(args.out) + ".diff.csv").write_text(report.diff_csv())
    else:
        sys.stdout.write(text)
        if report.differences():
            sys.stdout.write("\n" + report.diff_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tstep-surveil", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--scenario", help="scenario YAML (default: shipped default)")
        p.add_argument("--stats-cache", help="statistics cache path")

    def sim(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--replan", choices=REPLAN_MODES)

    p = sub.add_parser("precompute", help="build the per-cell statistics cache")
    common(p)
    p.add_argument("--out", help="cache output path (same as --stats-cache)")
    p.set_defaults(func=cmd_precompute)

    for name, func, help_text in (
        ("run", cmd_run, "run one experiment"),
        ("replay", cmd_replay, "run one experiment on a recorded spawn stream"),
    ):
        p = sub.add_parser(name, help=help_text)
        common(p)
        sim(p)
        p.add_argument("--strategy", choices=STRATEGIES)
        p.add_argument("--record", help="write the consumed spawn stream here")
        p.add_argument("--replay", required=(name == "replay"), help="replay a recorded spawn stream")
        p.add_argument("--out", help="summary CSV path (default: stdout)")
        p.add_argument("--log", help="per-step JSONL log path")
        p.add_argument("--trace", help="per-round planning trace (JSONL)")
        p.set_defaults(func=func)

    p = sub.add_parser("compare", help="compare strategies on paired spawn streams")
    common(p)
    sim(p)
    p.add_argument("--strategy", action="append", help="strategy label; repeat for each strategy")
    p.add_argument("--base-strategy", help="strategy whose traffic is recorded (default: first)")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--out", help="report CSV path (default: stdout)")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, StatsCacheError, StreamError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, SimulationError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
