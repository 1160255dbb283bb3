"""Command-line interface: run experiments, list problems, check the registry."""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments, problems


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stcutfem",
        description="Unfitted space-time finite elements on moving domains",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("solve", help="run an experiment from a config file")
    run.add_argument("--config", required=True, help="flat key = value config file")
    run.add_argument("--refinements", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--depth", type=int, default=None, help="cut-quadrature subdivision depth")

    sub.add_parser("list-problems", help="list registered problems")
    check = sub.add_parser("check-registry", help="verify exact solutions against the PDE")
    check.add_argument("--points", type=int, default=100)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.command == "list-problems":
        for name in sorted(problems.REGISTRY):
            print(name)
        return 0

    if args.command == "check-registry":
        results = problems.check_registry(n_points=args.points)
        for name in sorted(results):
            res = results[name]
            status = "no exact solution" if res != res else f"max residual {res:.3e}"
            print(f"{name}: {status}")
        return 0

    config = experiments.load_config(args.config)
    import dataclasses

    updates = {}
    if args.refinements is not None:
        updates["refinements"] = args.refinements
    if args.out is not None:
        updates["out"] = args.out
    if args.depth is not None:
        updates["depth"] = args.depth
    if updates:
        config = dataclasses.replace(config, **updates)
    return experiments.run_experiment(config)


if __name__ == "__main__":
    sys.exit(main())
