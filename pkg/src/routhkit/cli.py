"""Command line entry point.

Exit codes: 0 all checks pass, 1 at least one check fails, 2 bad
configuration or usage.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, RouthkitError
from .harness import SUITES, run_scenario


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc


def _print_reports(result) -> None:
    for rep in result.reports:
        d = rep.to_dict()
        print(json.dumps(d, sort_keys=True))
    print(f"{'PASS' if result.passed else 'FAIL'}: "
          f"{sum(r.passed for r in result.reports)}/{len(result.reports)} checks passed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="routhkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="integrate a configured system")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)

    p_red = sub.add_parser("reduce", help="run the two-step reduction pipeline")
    p_red.add_argument("--config", required=True)
    p_red.add_argument("--connection", choices=["mechanical", "A0"])
    p_red.add_argument("--mu", type=float)
    p_red.add_argument("--out", required=True)

    p_ver = sub.add_parser("verify", help="run a verification suite")
    p_ver.add_argument("--suite", required=True, choices=list(SUITES))
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--probes", type=int, default=100)
    p_ver.add_argument("--out")

    p_cmp = sub.add_parser("compare", help="full dynamics against the reduction")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--tol", type=float)
    p_cmp.add_argument("--out", default="compare_out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _load_config(args.config)
            cfg["scenario"] = "simulate"
            result = run_scenario(cfg, args.out)
        elif args.command == "reduce":
            cfg = _load_config(args.config)
            cfg["scenario"] = "reduce"
            if args.connection is not None:
                cfg["connection"] = args.connection
            if args.mu is not None:
                cfg["mu"] = args.mu
            result = run_scenario(cfg, args.out)
        elif args.command == "verify":
            cfg = {"scenario": "verify", "suite": args.suite,
                   "seed": args.seed, "probes": args.probes}
            result = run_scenario(cfg, args.out)
        else:
            cfg = _load_config(args.config)
            cfg["scenario"] = "compare"
            if args.tol is not None:
                cfg["tol"] = args.tol
            result = run_scenario(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RouthkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print_reports(result)
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
