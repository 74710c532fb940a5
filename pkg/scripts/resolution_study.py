"""Resolution versus trigger count and tap jitter.

For each configuration the estimator is run at a mid-bin delay; with tap
jitter the resolution falls below the 5 ps tap pitch as triggers grow.
"""
import argparse
import csv
import sys

from sbtdc.errors import NotResolvableError
from sbtdc.harness import estimate_resolution
from sbtdc.readout import DeviceConfig, reconfigure
from sbtdc.timebase import PS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--base-fs", type=int, default=1502500)
    ap.add_argument("--jitters-ps", type=float, nargs="+", default=[0, 1, 2.5, 5, 10])
    ap.add_argument("--triggers", type=int, nargs="+", default=[1, 10, 100, 1000, 10000])
    args = ap.parse_args()

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["tap_jitter_ps", "triggers", "resolution_fs"])
    for jitter in args.jitters_ps:
        for t in args.triggers:
            dev = reconfigure(DeviceConfig(tap_jitter_sigma=round(jitter * PS)), 1, 600, t)
            try:
                r = int(estimate_resolution(dev, args.base_fs, 100 * PS, t, seed=args.seed))
            except NotResolvableError:
                r = ""
            w.writerow([jitter, t, r])


if __name__ == "__main__":
    main()
