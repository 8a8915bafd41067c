"""Command-line interface: ``pnpdg run | converge | list-scenarios``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .basis import ConfigurationError
from .scenarios import (EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, OUT_DIR_ENV, ScenarioConfig, builtin_scenario,
                        convergence_study, default_out_dir, list_scenarios, run)
from .stepper import SolverFailure

OVERRIDES = ("N", "k", "mu", "T", "beta0", "beta1", "scheme")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pnpdg", description="DG solver for 1D Poisson-Nernst-Planck systems")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="built-in scenario name")
    common.add_argument("--config", type=Path, help="JSON config file (may name a base 'scenario')")
    common.add_argument("--N", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--mu", type=float)
    common.add_argument("--T", type=float)
    common.add_argument("--beta0", type=float)
    common.add_argument("--beta1", type=float)
    common.add_argument("--scheme", choices=["euler", "rk2", "ssp-rk3"])
    common.add_argument("--out-dir", type=Path,
                        help=f"output directory (default ${OUT_DIR_ENV}/<scenario> or ./pnpdg-out/<scenario>)")

    r = sub.add_parser("run", parents=[common], help="integrate one scenario")
    r.add_argument("--strict", action="store_true", help="exit with status 2 on invariant violations")
    r.add_argument("--snapshot-every", type=int, help="write snapshots every this many steps")

    c = sub.add_parser("converge", parents=[common], help="mesh-refinement study against the exact solution")
    c.add_argument("--meshes", type=int, nargs="+", default=[5, 10, 20, 40], help="cell counts to run")
    c.add_argument("--workers", type=int, default=1, help="parallel processes")

    sub.add_parser("list-scenarios", help="show built-in scenarios")
    return p


def _config(args) -> ScenarioConfig:
    if args.config is not None:
        cfg = ScenarioConfig.load(args.config, base=args.scenario)
    elif args.scenario is not None:
        cfg = builtin_scenario(args.scenario)
    else:
        raise ConfigurationError("give --scenario or --config")
    changes = {name: getattr(args, name) for name in OVERRIDES if getattr(args, name) is not None}
    if getattr(args, "strict", False):
        changes["strict"] = True
    if getattr(args, "snapshot_every", None) is not None:
        changes["snapshot_every"] = args.snapshot_every
    return cfg.replace(**changes) if changes else cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-scenarios":
        for name, doc in list_scenarios().items():
            print(f"{name:10s} {doc}")
        return EXIT_OK
    try:
        cfg = _config(args)
        out = args.out_dir if args.out_dir is not None else default_out_dir(cfg.name)
        if args.command == "run":
            result = run(cfg, out)
            s = result.summary
            print(f"{cfg.name}: status {result.status}, t={s.get('final_time', s.get('failure_time'))}, "
                  f"steps {s.get('steps')}, outputs in {result.out_dir}")
            if "error" in s:
                print(f"error: {s['error']}", file=sys.stderr)
            for v in s.get("violations", []):
                print(f"violation: {v}", file=sys.stderr)
            return result.status
        report = convergence_study(cfg, args.meshes, out, workers=args.workers)
        print(report.to_text())
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
