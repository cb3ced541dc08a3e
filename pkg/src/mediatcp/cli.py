"""Command-line entry point: ``mediatcp {run,sweep,compare,fairness,oracle-check}``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

from . import experiments
from .config import CONTROLLERS, SimConfig, load_config
from .media import ConfigError
from .reporting import write_json, write_table, write_trace
from .sim import run
from .solver import PreconditionError

EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2


def _grid(cast: Callable) -> Callable[[str], list]:
    def parse(text: str) -> list:
        try:
            vals = [cast(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}: {exc}") from None
        if not vals:
            raise argparse.ArgumentTypeError("grid must be nonempty")
        return vals
    return parse


def _controllers(text: str) -> list[str]:
    vals = _grid(str)(text)
    bad = [v for v in vals if v not in CONTROLLERS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown controller(s) {bad}; choose from {CONTROLLERS}")
    return vals


def _load(args) -> SimConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _rows(path: Path, rows: list[dict], cfg) -> None:
    if rows:
        write_table(path, list(rows[0]), ([r[c] for c in rows[0]] for r in rows), cfg)


def cmd_run(args) -> int:
    cfg = _load(args)
    res = run(cfg)
    out = Path(args.out)
    write_trace(out / "trace.csv", cfg, res.trace)
    write_json(out / "summary.json", {"summary": res.summary}, cfg)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows, runs = experiments.sweep(
        cfg, args.lambda_grid, args.gamma_grid, args.k_grid, args.replicates, args.parallelism
    )
    out = Path(args.out)
    _rows(out / "sweep.csv", rows, cfg)
    _rows(out / "sweep_runs.csv", runs, cfg)
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    delays = args.delay_grid or sorted({u.playback_delay for u in cfg.users})
    rows, runs = experiments.compare(cfg, args.controllers, delays, args.replicates, args.parallelism)
    out = Path(args.out)
    _rows(out / "compare.csv", rows, cfg)
    _rows(out / "compare_runs.csv", runs, cfg)
    return 0


def cmd_fairness(args) -> int:
    cfg = _load(args)
    if len(cfg.users) < 2:
        raise ConfigError("config.users: fairness needs at least two media users")
    counts = args.tcp_users_grid or [cfg.background.count]
    rows, runs, report = experiments.fairness_study(cfg, counts, args.replicates, args.parallelism)
    out = Path(args.out)
    _rows(out / "fairness.csv", rows, cfg)
    _rows(out / "fairness_runs.csv", runs, cfg)
    write_json(out / "fairness_conditions.json", {"conditions": report}, cfg)
    return 0


def cmd_oracle_check(args) -> int:
    params = {"instances": args.instances, "classes": args.classes, "n_max": args.n_max,
              "points": args.points, "k_grid": args.k_grid or [2], "dag": args.dag,
              "seed": args.seed or 0}
    reports = []
    for k in params["k_grid"]:
        reports.append(experiments.oracle_check(
            instances=args.instances, m_count=args.classes, n_max=args.n_max,
            points=args.points, horizon=k, dag=args.dag, seed=args.seed or 0,
        ))
    ok = all(r["pass"] for r in reports)
    write_json(Path(args.out) / "oracle_check.json", {"reports": reports, "pass": ok}, params)
    for r in reports:
        print(f"K={r['horizon']} dag={r['dag']}: {r['disagreements']} of {r['states']} states disagree")
    return 0 if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mediatcp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--parallelism", type=int, default=1, help="worker processes")
        sp.add_argument("--replicates", type=int, default=1,
                        help="seeds per grid point, starting at the config seed")

    sp = sub.add_parser("run", help="simulate one config")
    common(sp)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("sweep", help="quality/friendliness tradeoff over lambda and gamma")
    common(sp)
    sp.add_argument("--lambda-grid", type=_grid(float), required=True)
    sp.add_argument("--gamma-grid", type=_grid(float), required=True)
    sp.add_argument("--k-grid", type=_grid(int), default=None)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("compare", help="controllers across playback delays")
    common(sp)
    sp.add_argument("--controllers", type=_controllers, default=list(CONTROLLERS))
    sp.add_argument("--delay-grid", type=_grid(float), default=None, help="seconds")
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("fairness", help="quality fairness among media users")
    common(sp)
    sp.add_argument("--tcp-users-grid", type=_grid(int), default=None)
    sp.set_defaults(fn=cmd_fairness)

    sp = sub.add_parser("oracle-check", help="decomposed solvers versus exhaustive search")
    common(sp, config=False)
    sp.add_argument("--instances", type=int, default=50)
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--n-max", type=int, default=3)
    sp.add_argument("--points", type=int, default=3, help="window grid points")
    sp.add_argument("--k-grid", type=_grid(int), default=None)
    sp.add_argument("--dag", choices=("none", "chain", "random"), default="none")
    sp.set_defaults(fn=cmd_oracle_check)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
