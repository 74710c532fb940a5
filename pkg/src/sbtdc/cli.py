"""Command-line entry point.

Exit codes: 0 success, 1 configuration error (or failed selftest), 2 integrity error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .calibration import compute_dnl_inl, decode_calibrated
from .channel import decode_measurement
from .errors import ConfigurationError, IntegrityError, NotResolvableError, TDCError
from .harness import (
    GeneratorModel,
    SweepSpec,
    calibrate_device,
    config_hash,
    emit_report,
    estimate_precision,
    estimate_resolution,
    read_capture,
    run_sweep,
    write_capture,
)
from .readout import DeviceConfig, assemble_measurements, device_from_dict, device_to_dict, load_device_config
from .timebase import PS, STREAM_GENERATOR, RandomSource

log = logging.getLogger("sbtdc")


def _ps(value: str) -> int:
    """Parse a picosecond value from the command line into femtoseconds."""
    try:
        return round(float(value) * PS)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value}")


def _device(args) -> DeviceConfig:
    return load_device_config(args.config) if args.config else DeviceConfig()


def _write(path: str, data: bytes):
    Path(path).write_bytes(data)
    log.info("wrote %s (%d bytes)", path, len(data))


def cmd_sweep(args) -> int:
    device = _device(args)
    triggers = args.triggers or device.channel(0).triggers_per_measurement
    spec = SweepSpec(args.start, args.stop, args.step, triggers, args.calibrated, args.seed)
    gen = GeneratorModel.create(args.accuracy, args.pulse_jitter, RandomSource(args.seed).substream(STREAM_GENERATOR))
    frames = [] if args.capture else None
    report = run_sweep(spec, device, gen, capture=frames)
    fmt = args.format or Path(args.out).suffix.lstrip(".") or "csv"
    _write(args.out, emit_report(report, fmt))
    if args.capture:
        write_capture(args.capture, device, frames)
    print(
        f"{len(report.records)} points, rms error {report.rms_error / PS:.2f} ps, "
        f"max |error| {report.max_abs_error / PS:.2f} ps ({triggers} triggers/point)"
    )
    return 0


def cmd_calibrate(args) -> int:
    device = _device(args)
    hist, table = calibrate_device(device, args.seed, samples_per_bin=args.samples_per_bin)
    if Path(args.out).suffix == ".csv":
        _write(args.out, table.to_csv().encode())
    else:
        write_capture(args.out, device, [], table)
    rep = compute_dnl_inl(hist, table.period, table.n_taps)
    print(f"calibrated {table.max_code + 1} codes from {table.n_samples} samples; "
          f"max|DNL| {rep.max_abs_dnl:.3f} LSB, max|INL| {rep.max_abs_inl:.3f} LSB")
    return 0


def cmd_characterize(args) -> int:
    device = _device(args)
    chan = device.channel(0)
    period = int(device.clock.nominal_period)
    hist, table = calibrate_device(device, args.seed, samples_per_bin=args.samples_per_bin)
    dnl = compute_dnl_inl(hist, period, chan.n_taps)
    try:
        resolution = int(estimate_resolution(device, args.base, args.max_step, args.resolution_triggers, args.seed))
    except NotResolvableError as exc:
        resolution = None
        log.warning("%s", exc)
    precision = int(estimate_precision(device, args.delay, args.repeats, args.seed))
    doc = {
        "config_sha256": config_hash(device),
        "config": device_to_dict(device),
        "seed": args.seed,
        "version": __version__,
        "resolution": {
            "base_fs": args.base,
            "max_step_fs": args.max_step,
            "triggers": args.resolution_triggers,
            "resolution_fs": resolution,
        },
        "precision": {
            "delay_fs": args.delay,
            "repeats": args.repeats,
            "triggers": chan.triggers_per_measurement,
            "precision_fs": precision,
        },
        "linearity": {
            "n_samples": hist.n_samples,
            "max_abs_dnl_lsb": round(dnl.max_abs_dnl, 6),
            "max_abs_inl_lsb": round(dnl.max_abs_inl, 6),
            "dnl_lsb": [round(float(x), 6) for x in dnl.dnl],
            "inl_lsb": [round(float(x), 6) for x in dnl.inl],
        },
    }
    _write(args.out, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
    res = "not resolvable" if resolution is None else f"{resolution / PS:g} ps"
    print(f"resolution {res}, precision {precision / PS:.3f} ps, max|INL| {dnl.max_abs_inl:.3f} LSB")
    return 0


def cmd_decode(args) -> int:
    cap = read_capture(args.capture)
    device = device_from_dict(cap.config)
    period = int(device.clock.nominal_period)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "channel_id", "coarse", "triggers", "n_taps", "raw_code", "estimate_fs", "decode"])
    for i, (ch, m) in enumerate(assemble_measurements(cap.frames)):
        chan = device.channel(0).with_triggers(m.triggers)
        if cap.table is not None:
            est, how = m.coarse * period + int(decode_calibrated(cap.table, m)), "calibrated"
        else:
            est, how = int(decode_measurement(m, chan, device.clock)), "raw"
        w.writerow([i, ch, m.coarse, m.triggers, m.n_taps, m.raw_code, est, how])
    _write(args.out, buf.getvalue().encode())
    if cap.errors:
        print(f"{len(cap.errors)} integrity errors while reading {args.capture}", file=sys.stderr)
        return 2
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(_device(args), args.seed)
    _write(args.out, (json.dumps(results, indent=2, sort_keys=True) + "\n").encode())
    for name, ok in results["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(results["checks"].values()) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbtdc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="device configuration JSON")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)
        return sp

    sp = common(sub.add_parser("sweep", help="delay sweep against the generator model"))
    sp.add_argument("--start", type=_ps, default=0, help="ps")
    sp.add_argument("--stop", type=_ps, default=3000 * PS, help="ps")
    sp.add_argument("--step", type=_ps, default=50 * PS, help="ps")
    sp.add_argument("--triggers", type=int, default=None)
    sp.add_argument("--calibrated", action="store_true")
    sp.add_argument("--accuracy", type=_ps, default=20 * PS, help="generator accuracy, ps")
    sp.add_argument("--pulse-jitter", type=_ps, default=0, help="generator pulse jitter, ps")
    sp.add_argument("--format", choices=["csv", "svg", "json"])
    sp.add_argument("--capture", help="also write raw frames to this capture file")
    sp.set_defaults(func=cmd_sweep)

    sp = common(sub.add_parser("calibrate", help="code-density calibration (.csv or capture)"))
    sp.add_argument("--samples-per-bin", type=int, default=200)
    sp.set_defaults(func=cmd_calibrate)

    sp = common(sub.add_parser("characterize", help="resolution, precision and DNL/INL"))
    sp.add_argument("--samples-per-bin", type=int, default=200)
    sp.add_argument("--base", type=_ps, default=2500, help="resolution base delay, ps")
    sp.add_argument("--max-step", type=_ps, default=100 * PS, help="ps")
    sp.add_argument("--resolution-triggers", type=int, default=1)
    sp.add_argument("--delay", type=_ps, default=1500 * PS, help="precision delay, ps")
    sp.add_argument("--repeats", type=int, default=100)
    sp.set_defaults(func=cmd_characterize)

    sp = common(sub.add_parser("decode", help="capture file to CSV"))
    sp.add_argument("capture")
    sp.set_defaults(func=cmd_decode)

    sp = common(sub.add_parser("selftest", help="run the invariant suite"))
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, TDCError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
