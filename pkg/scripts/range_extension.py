"""Error added by the coarse counter as a function of elapsed clock cycles.

Compares decodes of ``f + k * period`` on a jittered clock with the fine-only
decode of ``f`` under the same seed and reports the rms difference per k.
"""
import argparse

import numpy as np

from sbtdc.channel import ChannelConfig, convert, decode_measurement
from sbtdc.reference_bank import build_bank
from sbtdc.timebase import PS, ClockModel, RandomSource


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--clock-jitter-ps", type=float, default=1.0)
    ap.add_argument("--fraction-ps", type=float, default=1000)
    ap.add_argument("--triggers", type=int, default=200)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--cycles", type=int, nargs="+", default=[0, 1, 10, 100, 333])
    args = ap.parse_args()

    period = 3000 * PS
    clean = ClockModel(period)
    jittery = ClockModel(period, cycle_jitter_sigma=round(args.clock_jitter_ps * PS))
    bank = build_bank(600, period, 0, 5 * PS, RandomSource(0))
    chan = ChannelConfig(600, args.triggers)
    frac = round(args.fraction_ps * PS)
    print("cycles,added_rms_fs,bound_fs")
    for k in args.cycles:
        d = frac + k * period
        added = []
        for s in range(args.trials):
            ref = int(decode_measurement(convert(chan, bank, clean, frac, RandomSource(s)), chan, clean)) - frac
            got = int(decode_measurement(convert(chan, bank, jittery, d, RandomSource(s)), chan, jittery)) - d
            added.append(got - ref)
        rms = float(np.sqrt(np.mean(np.square(added))))
        print(f"{k},{rms:.0f},{np.sqrt(max(k, 1)) * args.clock_jitter_ps * PS:.0f}")


if __name__ == "__main__":
    main()
