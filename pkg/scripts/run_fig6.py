#!/usr/bin/env python3
"""Mean latency vs number of ONUs at 0.035 Gbps per ONU on one 100G carrier.

    python scripts/run_fig6.py --out fig6.csv
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
    ap.add_argument("--ratio-b", type=float, help="busy-hour rate multiplier (default from the preset)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    scen = load_scenario("fig6-onu-sweep")
    kw = {"sim": {**scen.sim, "sim_duration_us": args.duration_us, "warmup_cycles": 0}, "replications": args.seeds}
    if args.ratio_b is not None:
        kw["busy"] = replace(scen.busy, ratio_b=args.ratio_b)
    rs = run_scenario(replace(scen, **kw), jobs=args.jobs)
    if args.out:
        export(rs, "csv", args.out)
    else:
        sys.stdout.write(to_csv(rs))
    return 0 if rs.ok else 2


if __name__ == "__main__":
    sys.exit(main())
