"""Code-density calibration, calibrated decoding and DNL/INL reporting.

Uniformly distributed delays over one period are converted and their raw
codes histogrammed; the share of hits a code collects is its bin width. The
lookup table places each code at the centre of its bin (hits below the code
plus half its own hits, scaled to the period).
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelConfig, Measurement, batch_codes
from .errors import ConfigurationError, DomainError, IntegrityError, UnsupportedVersionError
from .reference_bank import ReferenceBank
from .timebase import STREAM_STIMULUS, ClockModel, Duration, RandomSource

MIN_SAMPLES_PER_BIN = 100
DEFAULT_SAMPLES_PER_BIN = 200
# Bound on the (samples x triggers x taps) working set of one batch.
_BATCH_CELLS = 4_000_000

TABLE_MAGIC = b"CALT"
TABLE_VERSION = 1
_TABLE_HEADER = struct.Struct(">4sHIQQ32sqII")


@dataclass
class CodeHistogram:
    counts: np.ndarray
    n_samples: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if (self.counts < 0).any():
            raise DomainError("histogram counts must be non-negative")
        if int(self.counts.sum()) != self.n_samples:
            raise DomainError("histogram counts do not sum to n_samples")

    @property
    def bins(self) -> int:
        return len(self.counts)

    def merge(self, other: "CodeHistogram") -> "CodeHistogram":
        if other.bins != self.bins:
            raise DomainError("cannot merge histograms with different bin counts")
        return CodeHistogram(self.counts + other.counts, self.n_samples + other.n_samples)


@dataclass(eq=False)
class CalibrationTable:
    code_to_time: np.ndarray  # int64 fs, nondecreasing
    period: int
    n_taps: int
    triggers: int
    n_samples: int = 0
    seed: int = 0
    bank_fingerprint: str = field(default="0" * 64)

    def __post_init__(self):
        self.code_to_time = np.asarray(self.code_to_time, dtype=np.int64)
        if len(self.code_to_time) != self.n_taps * self.triggers + 1:
            raise DomainError("table length must be triggers * n_taps + 1")
        if (np.diff(self.code_to_time) < 0).any():
            raise DomainError("calibration table must be nondecreasing")
        if self.code_to_time[0] < 0 or self.code_to_time[-1] > self.period:
            raise DomainError("calibration table leaves [0, period]")

    @property
    def max_code(self) -> int:
        return len(self.code_to_time) - 1

    def __eq__(self, other):
        if not isinstance(other, CalibrationTable):
            return NotImplemented
        return (
            np.array_equal(self.code_to_time, other.code_to_time)
            and (self.period, self.n_taps, self.triggers, self.n_samples, self.seed, self.bank_fingerprint)
            == (other.period, other.n_taps, other.triggers, other.n_samples, other.seed, other.bank_fingerprint)
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["code", "time_fs"])
        for code, t in enumerate(self.code_to_time):
            w.writerow([code, int(t)])
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        header = _TABLE_HEADER.pack(
            TABLE_MAGIC,
            TABLE_VERSION,
            len(self.code_to_time),
            self.n_samples,
            self.seed,
            bytes.fromhex(self.bank_fingerprint),
            int(self.period),
            self.n_taps,
            self.triggers,
        )
        return header + self.code_to_time.astype(">i8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "CalibrationTable":
        if len(data) < _TABLE_HEADER.size:
            raise IntegrityError("truncated calibration section")
        magic, version, n, n_samples, seed, fp, period, n_taps, triggers = _TABLE_HEADER.unpack_from(data)
        if magic != TABLE_MAGIC:
            raise IntegrityError("bad calibration section magic")
        if version != TABLE_VERSION:
            raise UnsupportedVersionError(f"calibration section version {version}")
        body = data[_TABLE_HEADER.size :]
        if len(body) != 8 * n:
            raise IntegrityError("calibration section length mismatch")
        times = np.frombuffer(body, dtype=">i8").astype(np.int64)
        return cls(times, period, n_taps, triggers, n_samples, seed, fp.hex())


@dataclass
class DnlInlReport:
    dnl: np.ndarray
    inl: np.ndarray

    @property
    def max_abs_dnl(self) -> float:
        return float(np.abs(self.dnl).max())

    @property
    def max_abs_inl(self) -> float:
        return float(np.abs(self.inl).max())


def histogram_codes(codes: np.ndarray, bins: int) -> CodeHistogram:
    return CodeHistogram(np.bincount(codes, minlength=bins), len(codes))


def table_from_histogram(hist: CodeHistogram, period: int) -> np.ndarray:
    """Midpoint cumulative rule with nearest-neighbour fill for empty codes."""
    counts = hist.counts
    n = hist.n_samples
    if n <= 0:
        raise DomainError("empty histogram")
    below = np.cumsum(counts) - counts
    times = (int(period) * (2 * below + counts) + n) // (2 * n)
    seen = np.flatnonzero(counts)
    if len(seen) < len(counts):
        idx = np.arange(len(counts))
        right = np.minimum(np.searchsorted(seen, idx), len(seen) - 1)
        left = np.maximum(right - 1, 0)
        lcode, rcode = seen[left], seen[right]
        # ties go to the lower neighbour
        nearest = np.where(np.abs(idx - lcode) <= np.abs(rcode - idx), lcode, rcode)
        times = times[nearest]
    return np.maximum.accumulate(times).astype(np.int64)


def code_density_calibrate(
    config: ChannelConfig,
    bank: ReferenceBank,
    clock: ClockModel,
    n_samples: int,
    rng: RandomSource,
) -> tuple[CodeHistogram, CalibrationTable]:
    bins = config.max_code + 1
    if n_samples < MIN_SAMPLES_PER_BIN * bins:
        raise ConfigurationError(
            f"{n_samples} samples is below {MIN_SAMPLES_PER_BIN} per code bin ({bins} bins)"
        )
    if config.n_taps != bank.n_taps:
        raise ConfigurationError("channel and bank tap counts differ")
    period = int(clock.nominal_period)
    batch = max(1, _BATCH_CELLS // (config.triggers_per_measurement * config.n_taps))
    hist = CodeHistogram(np.zeros(bins, dtype=np.int64), 0)
    for chunk, start in enumerate(range(0, n_samples, batch)):
        size = min(batch, n_samples - start)
        sub = rng.substream(STREAM_STIMULUS, chunk)
        delays = sub.generator.integers(0, period, size, dtype=np.int64)
        codes = batch_codes(config, bank, clock, delays, sub.substream(0))
        hist = hist.merge(histogram_codes(codes, bins))
    table = CalibrationTable(
        table_from_histogram(hist, period),
        period=period,
        n_taps=config.n_taps,
        triggers=config.triggers_per_measurement,
        n_samples=n_samples,
        seed=rng.seed,
        bank_fingerprint=bank.fingerprint(),
    )
    return hist, table


def apply_calibration(table: CalibrationTable, raw_code: int) -> Duration:
    if not 0 <= raw_code <= table.max_code:
        raise DomainError(f"code {raw_code} outside calibration table [0, {table.max_code}]")
    return Duration(int(table.code_to_time[raw_code]))


def decode_calibrated(table: CalibrationTable, m: Measurement) -> Duration:
    """Calibrated fine estimate of a measurement.

    A table built over the measurement's full code range is a direct lookup.
    A single-trigger table (``n_taps + 1`` entries) is applied to every
    trigger's code and the lookups are averaged.
    """
    if table.n_taps != m.n_taps:
        raise DomainError("table and measurement tap counts differ")
    if table.triggers == m.triggers:
        return apply_calibration(table, m.raw_code)
    if table.triggers != 1:
        raise DomainError("table trigger count does not match the measurement")
    total = int(table.code_to_time[m.trigger_codes].sum())
    return Duration((2 * total + m.triggers) // (2 * m.triggers))


def compute_dnl_inl(hist: CodeHistogram, period: int, n_taps: int) -> DnlInlReport:
    """Per-code DNL and INL in LSB, ``LSB = period / (bins - 1)``.

    The ladder starts at 0, so code 0 is the zero-width underflow point and
    its ideal width is 0; every other code ideally spans one LSB. With that
    convention the INL at code ``c`` is the offset of the ``c``-th sorted
    threshold from its ideal position.
    """
    if hist.n_samples <= 0:
        raise DomainError("empty histogram")
    if (hist.bins - 1) % n_taps:
        raise DomainError("histogram bin count is not a multiple of n_taps plus one")
    ideal_lsb = period / (hist.bins - 1)
    width = period * hist.counts / hist.n_samples
    ideal = np.ones(hist.bins)
    ideal[0] = 0.0
    dnl = width / ideal_lsb - ideal
    return DnlInlReport(dnl, np.cumsum(dnl))


def threshold_bins(bank: ReferenceBank) -> tuple[np.ndarray, np.ndarray]:
    """Exact noise-free single-trigger code bins ``(lo, hi]`` from the tap thresholds.

    Code ``c`` is produced by delays in ``(s[c-1], s[c]]`` where ``s`` is the
    sorted threshold list clipped to ``[0, period)``; empty bins have
    ``hi <= lo``.
    """
    period = int(bank.period)
    s = np.clip(np.sort(bank.static_thresholds), 0, period)
    lo = np.concatenate([[0], s])
    hi = np.concatenate([s, [period]])
    return lo, hi


def transfer_inl(code_to_time: np.ndarray, bank: ReferenceBank) -> np.ndarray:
    """Per-code offset (LSB) of decoded times from true bin centres; NaN for empty bins."""
    lo, hi = threshold_bins(bank)
    centre = (lo + hi) / 2
    out = (np.asarray(code_to_time, dtype=float) - centre) / (bank.period / bank.n_taps)
    out[hi <= lo] = np.nan
    return out


def linear_table(config: ChannelConfig, period: int) -> np.ndarray:
    """The uncalibrated decode written out as a table."""
    codes = np.arange(config.max_code + 1, dtype=np.int64)
    denom = config.max_code
    return (2 * codes * int(period) + denom) // (2 * denom)
