"""Command line entry point: ``tes-sched run``."""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .harness import ProfileError, emit_report, load_profiles, run_closed_loop
from .scheduler import SchedulingInfeasible
from .tes import ConfigurationError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tes-sched",
                                description="Closed-loop economic scheduling of a PCM cold store.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate a scenario and write the report")
    run.add_argument("--config", required=True, help="key = value configuration file")
    run.add_argument("--scenario", required=True, help="CSV with hour, demand_w, price_eur_kwh, t_surr_c")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--horizon", type=int, help="prediction horizon in steps")
    run.add_argument("--dt-seconds", type=float, help="sampling time, overrides the scenario spacing")
    run.add_argument("--gamma-min", type=float)
    run.add_argument("--gamma-max", type=float)
    run.add_argument("--format", choices=("csv", "summary"), default="csv",
                     help="what to print on stdout")
    run.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    return p


def _run(args) -> int:
    cfg = load_config(args.config)
    changes = {k: v for k, v in (("horizon", args.horizon), ("dt", args.dt_seconds),
                                 ("gamma_min", args.gamma_min), ("gamma_max", args.gamma_max))
               if v is not None}
    if changes:
        try:
            cfg = cfg.with_scheduler(**changes)
        except ConfigurationError as exc:
            raise ConfigurationError(f"command line: {exc}") from None
    profiles = load_profiles(args.scenario, dt=args.dt_seconds)
    report = run_closed_loop(profiles, cfg)
    paths = emit_report(report, args.out, args.format, figures=not args.no_figures)
    sys.stdout.write(paths["stdout"])
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except SchedulingInfeasible as exc:
        print(f"tes-sched: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigurationError, ProfileError, OSError) as exc:
        print(f"tes-sched: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
