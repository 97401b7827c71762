#!/usr/bin/env python3
"""Mean latency vs per-ONU load, 512 ONUs on one 100G carrier (RR / WF / HS).

    python scripts/run_fig5.py --duration-us 500000 --seeds 4 --out fig5.csv
"""

import argparse
import sys
from dataclasses import replace

from ponsim.experiment import export, run_scenario, to_csv
from ponsim.scenario import load_scenario


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration-us", type=float, default=500_000)
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--loads", help="comma list of per-ONU base rates in Gbps")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    scen = load_scenario("fig5-tdm512")
    kw = {"sim": {**scen.sim, "sim_duration_us": args.duration_us, "warmup_cycles": 0}, "replications": args.seeds}
    if args.loads:
        kw["sweep_values"] = tuple(float(x) for x in args.loads.split(","))
    scen = replace(scen, **kw)
    rs = run_scenario(scen, jobs=args.jobs)
    if args.out:
        export(rs, "csv", args.out)
    else:
        sys.stdout.write(to_csv(rs))
    return 0 if rs.ok else 2


if __name__ == "__main__":
    sys.exit(main())
