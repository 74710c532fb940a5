"""Reproduce the 0-3000 ps accuracy sweep and write CSV, JSON and SVG reports."""
import argparse
from pathlib import Path

from sbtdc.harness import GeneratorModel, SweepSpec, emit_report, run_sweep
from sbtdc.readout import DeviceConfig, reconfigure
from sbtdc.timebase import PS, STREAM_GENERATOR, RandomSource


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--triggers", type=int, default=1000)
    ap.add_argument("--tap-jitter-ps", type=float, default=5.0)
    ap.add_argument("--accuracy-ps", type=float, default=20.0)
    ap.add_argument("--raw", action="store_true", help="skip calibration")
    ap.add_argument("--out", default="results/accuracy")
    args = ap.parse_args()

    dev = reconfigure(DeviceConfig(tap_jitter_sigma=round(args.tap_jitter_ps * PS)), 1, 600, args.triggers)
    gen = GeneratorModel.create(round(args.accuracy_ps * PS), 0, RandomSource(args.seed).substream(STREAM_GENERATOR))
    spec = SweepSpec(0, 3000 * PS, 50 * PS, args.triggers, calibrated=not args.raw, seed=args.seed)
    report = run_sweep(spec, dev, gen)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    for fmt in ("csv", "json", "svg"):
        out.with_suffix("." + fmt).write_bytes(emit_report(report, fmt))
    print(f"generator offset {gen.systematic_error / PS:+.2f} ps")
    print(f"rms error {report.rms_error / PS:.2f} ps, max |error| {report.max_abs_error / PS:.2f} ps")


if __name__ == "__main__":
    main()
