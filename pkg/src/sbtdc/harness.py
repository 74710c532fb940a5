"""Experiment harness: generator model, sweeps, estimators, reports, captures."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .calibration import (
    DEFAULT_SAMPLES_PER_BIN,
    CalibrationTable,
    code_density_calibrate,
    decode_calibrated,
)
from .channel import ChannelConfig, convert, decode_measurement, fractional_offsets
from .errors import ConfigurationError, IntegrityError, NotResolvableError, UnsupportedVersionError, UsageError
from .readout import (
    DeviceConfig,
    Frame,
    FrameType,
    canonical_config_json,
    channel_stream,
    decode_stream,
    encode_frame,
    measurement_payloads,
)
from .timebase import (
    PS,
    STREAM_GENERATOR,
    STREAM_POINT,
    STREAM_REPEAT,
    STREAM_STIMULUS,
    STREAM_TAP,
    Duration,
    RandomSource,
    gaussian,
)

SIGNIFICANCE = 3.0
MIN_PRECISION_REPEATS = 30
COARSE_LIMIT = 2**32  # coarse field width in the measurement payload


@dataclass(frozen=True)
class GeneratorModel:
    """Pulse generator: requested delay + fixed setting error + per-pulse jitter."""

    accuracy: int = 0
    pulse_jitter_sigma: int = 0
    systematic_error: int = 0

    def __post_init__(self):
        if self.accuracy < 0 or self.pulse_jitter_sigma < 0:
            raise ConfigurationError("generator accuracy and jitter must be non-negative")
        if abs(self.systematic_error) > self.accuracy:
            raise ConfigurationError("systematic error exceeds the stated accuracy")

    @classmethod
    def create(cls, accuracy: int, pulse_jitter_sigma: int, rng: RandomSource) -> "GeneratorModel":
        """Draw the instance's systematic error uniformly from ``[-accuracy, accuracy]``."""
        err = int(rng.generator.integers(-accuracy, accuracy, endpoint=True)) if accuracy else 0
        return cls(accuracy, pulse_jitter_sigma, err)

    def emit(self, requested: int, rng: RandomSource) -> Duration:
        # A physical generator cannot put the stop edge before the start edge.
        d = int(requested) + self.systematic_error + int(gaussian(rng, self.pulse_jitter_sigma))
        return Duration(max(0, d))


@dataclass(frozen=True)
class SweepSpec:
    start: int
    stop: int
    step: int = 50 * PS
    triggers_per_point: int = 1000
    calibrated: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.start < 0:
            raise ConfigurationError("sweep start must be non-negative")
        if self.start > self.stop:
            raise ConfigurationError("sweep start must not exceed stop")
        if self.step <= 0:
            raise ConfigurationError("sweep step must be positive")
        if self.triggers_per_point < 1:
            raise ConfigurationError("triggers_per_point must be >= 1")

    @property
    def points(self) -> list[int]:
        n = (self.stop - self.start) // self.step + 1
        return [self.start + i * self.step for i in range(n)]


@dataclass(frozen=True)
class SweepRecord:
    requested_fs: int
    mean_fs: int
    stddev_fs: int
    error_fs: int


@dataclass
class SweepReport:
    records: list[SweepRecord]
    provenance: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error_fs for r in self.records], dtype=float)

    @property
    def rms_error(self) -> float:
        return float(np.sqrt(np.mean(self.errors**2)))

    @property
    def max_abs_error(self) -> float:
        return float(np.abs(self.errors).max())

    def aggregates(self) -> dict:
        return {
            "points": len(self.records),
            "rms_error_fs": round(self.rms_error, 3),
            "max_abs_error_fs": int(self.max_abs_error),
            "mean_error_fs": round(float(self.errors.mean()), 3),
        }


def config_hash(device: DeviceConfig) -> str:
    return hashlib.sha256(canonical_config_json(device).encode()).hexdigest()


def calibrate_device(device: DeviceConfig, seed: int, channel: int = 0, samples_per_bin: int = DEFAULT_SAMPLES_PER_BIN):
    """Single-trigger code-density calibration of one channel."""
    chan = device.channel(channel).with_triggers(1)
    n = samples_per_bin * (chan.max_code + 1)
    rng = RandomSource(seed).substream(STREAM_STIMULUS)
    return code_density_calibrate(chan, device.bank, device.clock, n, rng)


def _range_check(spec: SweepSpec, device: DeviceConfig, generator: GeneratorModel, chan: ChannelConfig):
    period = int(device.clock.nominal_period)
    reach = spec.stop + generator.accuracy
    if chan.coarse_enabled:
        if reach >= period * COARSE_LIMIT:
            raise ConfigurationError(f"sweep stop {spec.stop} fs beyond the coarse counter range")
    elif reach >= period:
        raise ConfigurationError(
            f"sweep stop {spec.stop} fs (+{generator.accuracy} fs generator error) reaches the "
            f"{period} fs period with the coarse counter disabled"
        )


def run_sweep(
    spec: SweepSpec,
    device: DeviceConfig,
    generator: GeneratorModel,
    channel: int = 0,
    table: Optional[CalibrationTable] = None,
    capture: Optional[list] = None,
) -> SweepReport:
    """Step the generator over the grid and record decoded statistics per point.

    With ``spec.calibrated`` a single-trigger code-density table is built first
    (or ``table`` is used). Frames of every point are appended to ``capture``
    when a list is given.
    """
    chan = device.channel(channel).with_triggers(spec.triggers_per_point)
    _range_check(spec, device, generator, chan)
    clock, bank = device.clock, device.bank
    period = int(clock.nominal_period)
    if spec.calibrated and table is None:
        _, table = calibrate_device(device, spec.seed, channel)
    rng = RandomSource(spec.seed)
    records = []
    for i, requested in enumerate(spec.points):
        prng = rng.substream(STREAM_POINT, i)
        emitted = generator.emit(requested, prng.substream(STREAM_GENERATOR))
        m = convert(chan, bank, clock, emitted, prng)
        codes = m.trigger_codes
        if spec.calibrated:
            mean = m.coarse * period + int(decode_calibrated(table, m))
            per_trigger = table.code_to_time[codes].astype(float)
        else:
            mean = int(decode_measurement(m, chan, clock))
            per_trigger = codes * (period / chan.n_taps)
        sd = float(np.std(per_trigger, ddof=1)) if len(codes) > 1 else 0.0
        records.append(SweepRecord(requested, mean, int(round(sd)), mean - requested))
        if capture is not None:
            for p in measurement_payloads(m):
                capture.append(Frame(FrameType.MEASUREMENT, channel, len(capture), p.to_bytes()))
    provenance = {
        "package": "sbtdc",
        "version": __version__,
        "numpy": np.__version__,
        "config_sha256": config_hash(device),
        "config": json.loads(canonical_config_json(device)),
        "seed": spec.seed,
        "sweep": asdict(spec),
        "generator": asdict(generator),
        "channel": channel,
        "decode": "calibrated" if spec.calibrated else "raw",
    }
    if table is not None and spec.calibrated:
        provenance["calibration"] = {
            "n_samples": table.n_samples,
            "seed": table.seed,
            "bank_fingerprint": table.bank_fingerprint,
        }
    return SweepReport(records, provenance)


# --- resolution ----------------------------------------------------------


class _CodeProbe:
    """Per-trigger codes at arbitrary delays with common random numbers.

    Every probe reuses the threshold matrix and jitter draws ``convert`` would
    use for the same ``rng``, so code differences between two delays reflect
    only the delay change.
    """

    def __init__(self, device: DeviceConfig, chan: ChannelConfig, rng: RandomSource):
        self.device, self.chan, self.rng = device, chan, rng
        self.thresholds = device.bank.sample_thresholds(rng.substream(STREAM_TAP), chan.triggers_per_measurement)
        self._cache: dict[int, tuple[float, float]] = {}

    def stats(self, delay: int) -> tuple[float, float]:
        if delay not in self._cache:
            _, offsets = fractional_offsets(self.chan, self.device.clock, delay, self.rng)
            codes = np.count_nonzero(offsets[:, None] > self.thresholds, axis=1)
            var = float(codes.var(ddof=1)) if len(codes) > 1 else 0.0
            self._cache[delay] = (float(codes.mean()), var)
        return self._cache[delay]

    def differs(self, a: int, b: int) -> bool:
        (ma, va), (mb, vb) = self.stats(a), self.stats(b)
        se = math.sqrt((va + vb) / self.chan.triggers_per_measurement)
        return abs(mb - ma) > SIGNIFICANCE * se


def _first_change(probe: _CodeProbe, base: int, direction: int, limit: int) -> Optional[int]:
    """Smallest step in ``[1, limit]`` whose probe differs from ``base`` (bisection)."""
    if limit < 1 or not probe.differs(base, base + direction * limit):
        return None
    lo, hi = 0, limit  # differs(hi) holds, differs(lo) assumed false
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe.differs(base, base + direction * mid):
            hi = mid
        else:
            lo = mid
    return hi


def estimate_resolution(
    device: DeviceConfig,
    base_delay: int,
    max_step: int,
    triggers: int,
    seed: int = 0,
    channel: int = 0,
) -> Duration:
    """Width of the input interval around ``base_delay`` that leaves the output unchanged.

    A step counts as a change when the mean code differs from the mean code
    at ``base_delay`` by more than three standard errors. The smallest such
    step is located upward and downward on the femtosecond grid; the result
    is the number of grid points between the two changes, i.e. the width of
    the indistinguishable interval. The generator is noise-free.
    """
    chan = device.channel(channel).with_triggers(triggers)
    period = int(device.clock.nominal_period)
    if base_delay < 0 or max_step < 1:
        raise ConfigurationError("base_delay must be >= 0 and max_step >= 1")
    if not chan.coarse_enabled and base_delay + max_step >= period:
        raise ConfigurationError("base_delay + max_step exceeds the single-period range")
    probe = _CodeProbe(device, chan, channel_stream(RandomSource(seed), channel))
    up = _first_change(probe, base_delay, +1, max_step)
    if up is None:
        raise NotResolvableError(max_step)
    down_limit = min(max_step, base_delay)
    down = _first_change(probe, base_delay, -1, down_limit)
    if down is None:
        down = base_delay + 1  # unchanged all the way to the start of the range
    return Duration(up + down - 1)


def estimate_precision(
    device: DeviceConfig,
    delay: int,
    repeats: int,
    seed: int = 0,
    channel: int = 0,
    table: Optional[CalibrationTable] = None,
) -> Duration:
    """Standard deviation of decoded estimates over independent repeated measurements."""
    if repeats < MIN_PRECISION_REPEATS:
        raise ConfigurationError(f"precision needs at least {MIN_PRECISION_REPEATS} repeats, got {repeats}")
    chan = device.channel(channel)
    clock = device.clock
    rng = channel_stream(RandomSource(seed), channel)
    est = []
    for r in range(repeats):
        m = convert(chan, device.bank, clock, delay, rng.substream(STREAM_REPEAT, r))
        if table is not None:
            est.append(m.coarse * int(clock.nominal_period) + int(decode_calibrated(table, m)))
        else:
            est.append(int(decode_measurement(m, chan, clock)))
    return Duration(int(round(float(np.std(est, ddof=1)))))


# --- reports -------------------------------------------------------------

CSV_COLUMNS = ("requested_fs", "mean_fs", "stddev_fs", "error_fs")


def report_to_dict(report: SweepReport) -> dict:
    return {
        "records": [asdict(r) for r in report.records],
        "aggregates": report.aggregates(),
        "provenance": report.provenance,
    }


def _csv(report: SweepReport) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.records:
        w.writerow([r.requested_fs, r.mean_fs, r.stddev_fs, r.error_fs])
    return buf.getvalue().encode()


def records_from_csv(data: bytes) -> list[SweepRecord]:
    rows = list(csv.DictReader(io.StringIO(data.decode())))
    return [SweepRecord(*(int(row[c]) for c in CSV_COLUMNS)) for row in rows]


def _svg_panel(ident, title, xs, ys, x0, y0, w, h, ylabel) -> list[str]:
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymin, ymax = ymin - 1.0, ymax + 1.0

    def px(x):
        return x0 + (x - xmin) / (xmax - xmin) * w

    def py(y):
        return y0 + h - (y - ymin) / (ymax - ymin) * h

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    return [
        f'<g class="panel" id="{ident}">',
        f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#444"/>',
        f'<text x="{x0 + w / 2:.1f}" y="{y0 - 8}" text-anchor="middle">{escape(title)}</text>',
        f'<text x="{x0 + w / 2:.1f}" y="{y0 + h + 32}" text-anchor="middle">requested delay [ps]</text>',
        f'<text x="{x0 - 48}" y="{y0 + h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 {x0 - 48} {y0 + h / 2:.1f})">{escape(ylabel)}</text>',
        f'<text x="{x0}" y="{y0 + h + 16}" text-anchor="start">{xmin:g}</text>',
        f'<text x="{x0 + w}" y="{y0 + h + 16}" text-anchor="end">{xmax:g}</text>',
        f'<text x="{x0 - 4}" y="{y0 + h}" text-anchor="end">{ymin:.3g}</text>',
        f'<text x="{x0 - 4}" y="{y0 + 10}" text-anchor="end">{ymax:.3g}</text>',
        f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>',
        "</g>",
    ]


def _svg(report: SweepReport) -> bytes:
    xs = [r.requested_fs / PS for r in report.records]
    means = [r.mean_fs / PS for r in report.records]
    errs = [r.error_fs / PS for r in report.records]
    width, height = 720, 640
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
    ]
    lines += _svg_panel("transfer", "TDC output vs. set delay", xs, means, 90, 40, 590, 220, "measured [ps]")
    lines += _svg_panel("error", "measured - set delay", xs, errs, 90, 360, 590, 220, "error [ps]")
    lines.append("</svg>")
    return ("\n".join(lines) + "\n").encode()


def emit_report(report: SweepReport, fmt: str) -> bytes:
    if not report.records:
        raise UsageError("cannot emit an empty report")
    if fmt == "csv":
        return _csv(report)
    if fmt == "json":
        return (json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n").encode()
    if fmt == "svg":
        return _svg(report)
    raise UsageError(f"unknown report format {fmt!r}")


# --- capture files -------------------------------------------------------

CAPTURE_MAGIC = b"TDCC"
CAPTURE_VERSION = 1
_CAP_HEAD = struct.Struct(">4sHI")


@dataclass
class CaptureFile:
    config: dict
    frames: list[Frame]
    table: Optional[CalibrationTable] = None
    version: int = CAPTURE_VERSION
    errors: list = field(default_factory=list)

    def to_bytes(self) -> bytes:
        cfg = json.dumps(self.config, sort_keys=True, separators=(",", ":")).encode()
        out = [_CAP_HEAD.pack(CAPTURE_MAGIC, self.version, len(cfg)), cfg]
        if self.table is None:
            out.append(struct.pack(">I", 0))
        else:
            cal = self.table.to_bytes()
            out += [struct.pack(">I", len(cal)), cal]
        out += [encode_frame(f) for f in self.frames]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CaptureFile":
        if len(data) < _CAP_HEAD.size or data[:4] != CAPTURE_MAGIC:
            raise IntegrityError("not a TDCC capture file")
        _, version, cfg_len = _CAP_HEAD.unpack_from(data)
        if version != CAPTURE_VERSION:
            raise UnsupportedVersionError(f"capture version {version}")
        pos = _CAP_HEAD.size
        try:
            config = json.loads(data[pos : pos + cfg_len])
        except ValueError as exc:
            raise IntegrityError("corrupt capture config section") from exc
        pos += cfg_len
        if len(data) < pos + 4:
            raise IntegrityError("truncated capture header")
        (cal_len,) = struct.unpack_from(">I", data, pos)
        pos += 4
        table = CalibrationTable.from_bytes(data[pos : pos + cal_len]) if cal_len else None
        pos += cal_len
        frames, errors = decode_stream(data[pos:])
        return cls(config, frames, table, version, errors)


def write_capture(path, device: DeviceConfig, frames: list[Frame], table: Optional[CalibrationTable] = None):
    cap = CaptureFile(json.loads(canonical_config_json(device)), frames, table)
    with open(path, "wb") as fh:
        fh.write(cap.to_bytes())


def read_capture(path) -> CaptureFile:
    with open(path, "rb") as fh:
        return CaptureFile.from_bytes(fh.read())
