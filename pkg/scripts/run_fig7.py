#!/usr/bin/env python3
"""Two-class TFDM run: 32 ONUs alone on Ch1, 480 ONUs over Ch2-Ch4, 25G each.

Prints per-group mean latency and the HS mode split per channel.

    python scripts/run_fig7.py --base 0.03
"""

import argparse
import sys
from dataclasses import replace

import numpy as np

from ponsim import engine
from ponsim.scenario import load_scenario


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--base", type=float, default=0.03, help="per-ONU base rate, Gbps")
    ap.add_argument("--duration-us", type=float, default=500_000)
    ap.add_argument("--seeds", type=int, default=4)
    args = ap.parse_args(argv)

    scen = load_scenario("fig7-tfdm")
    print("policy,group1_mean_us,group2_mean_us,rr_fraction_ch1,rr_fraction_ch2,rr_fraction_ch3,rr_fraction_ch4")
    for policy in ("RR", "WF", "HS"):
        g1, g2, frac = [], [], []
        for r in range(args.seeds):
            cfg = scen.config(args.base, seed_offset=r, policy=policy)
            rep = engine.run(replace(cfg, sim_duration_us=args.duration_us, warmup_cycles=0))
            g1.append(rep.latency.by_group[1].mean_us)
            g2.append(rep.latency.by_group[2].mean_us)
            frac.append([rep.timelines[k].mode_rr_fraction for k in sorted(rep.timelines)])
        f = np.mean(frac, axis=0)
        print(",".join([policy, f"{np.mean(g1):.2f}", f"{np.mean(g2):.2f}", *(f"{x:.3f}" for x in f)]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
