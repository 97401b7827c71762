"""Command line: ``ponsim run|sweep|presets``.

Exit codes: 0 success, 1 configuration error, 2 a run breached a
simulation invariant.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import engine
from .experiment import export, run_scenario, to_csv, to_json
from .model import ConfigError, InvariantError
from .scenario import PRESETS, _split_values, load_scenario, parse_policies, sweep_type

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ponsim", description="Upstream DBA simulator for coherent TDM/TFDM PONs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario file or preset name")
        sp.add_argument("--policies", help="comma list of RR, WF, HS")
        sp.add_argument("--seed", type=int, help="base RNG seed")
        sp.add_argument("--replications", type=int)
        sp.add_argument("--duration-us", type=float, help="override simulated time")
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    r = sub.add_parser("run", help="run the scenario at its base point (no sweep)")
    common(r)
    r.add_argument("--trace", help="per-cycle grant CSV (single run only)")
    s = sub.add_parser("sweep", help="run the scenario's sweep axis")
    common(s)
    s.add_argument("--param", help="override the sweep parameter")
    s.add_argument("--values", help="override the sweep values (comma list)")
    sub.add_parser("presets", help="list built-in presets")
    return p


def _apply_overrides(scen, args):
    sim = dict(scen.sim)
    if args.seed is not None:
        sim["rng_seed"] = args.seed
    if args.duration_us is not None:
        sim["sim_duration_us"] = args.duration_us
    kw = {"sim": sim}
    if args.policies:
        kw["policies"] = parse_policies(args.policies)
    if args.replications is not None:
        kw["replications"] = args.replications
    if getattr(args, "param", None) or getattr(args, "values", None):
        param = args.param or scen.sweep_param
        if not param:
            raise ConfigError(["--values given but the scenario has no sweep parameter; pass --param"])
        sweep_type(param)
        values = _split_values(args.values) if args.values else scen.sweep_values
        kw["sweep_param"] = param
        kw["sweep_values"] = values
    scen = replace(scen, **kw)
    scen.config()
    return scen


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "presets":
        for name in sorted(PRESETS):
            print(name)
        return EXIT_OK

    try:
        scen = _apply_overrides(load_scenario(args.scenario), args)
    except ConfigError as e:
        for err in e.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run" and args.trace:
        if len(scen.policies) != 1 or scen.replications != 1:
            print("config error: --trace needs exactly one policy and one replication", file=sys.stderr)
            return EXIT_CONFIG
        cfg = scen.config(policy=scen.policies[0])
        try:
            with open(args.trace, "w", newline="") as fh:
                engine.run(cfg, trace=fh)
        except InvariantError as e:
            print(f"invariant breach: {e}", file=sys.stderr)
            return EXIT_RUNTIME

    results = run_scenario(scen, sweep=args.command == "sweep", jobs=args.jobs)
    if args.out:
        export(results, args.format, args.out)
    else:
        sys.stdout.write(to_csv(results) if args.format == "csv" else to_json(results) + "\n")
    if not results.ok:
        for r in results.runs:
            if not r.ok:
                print(f"run failed ({r.policy}, {r.sweep_value}, rep {r.replication}): {r.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
