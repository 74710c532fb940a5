"""One conversion channel: stochastic bitstream, summation decode, coarse counter."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError, RangeExceededError
from .reference_bank import DEFAULT_N_TAPS, ReferenceBank
from .timebase import (
    STREAM_EDGE,
    STREAM_INPUT,
    STREAM_TAP,
    ClockModel,
    Duration,
    RandomSource,
    coarse_count,
    edge_time,
)

DEFAULT_TRIGGERS = 1000


@dataclass(frozen=True)
class ChannelConfig:
    n_taps: int = DEFAULT_N_TAPS
    triggers_per_measurement: int = DEFAULT_TRIGGERS
    input_jitter_sigma: int = 0
    coarse_enabled: bool = True

    def __post_init__(self):
        if self.n_taps < 2:
            raise ConfigurationError("n_taps must be >= 2")
        if self.triggers_per_measurement < 1:
            raise ConfigurationError("triggers_per_measurement must be >= 1")
        if self.input_jitter_sigma < 0:
            raise ConfigurationError("input_jitter_sigma must be non-negative")

    @property
    def max_code(self) -> int:
        return self.n_taps * self.triggers_per_measurement

    def with_triggers(self, triggers: int) -> "ChannelConfig":
        return replace(self, triggers_per_measurement=triggers)


@dataclass(eq=False)
class Measurement:
    coarse: int
    bitstream: np.ndarray  # bool, (triggers, n_taps)
    raw_code: int
    true_delay_echo: Optional[Duration] = field(default=None, repr=False)

    def __post_init__(self):
        if self.coarse < 0:
            raise DomainError("coarse count must be non-negative")
        if self.bitstream.ndim != 2:
            raise DomainError("bitstream must be a (triggers, n_taps) matrix")
        if self.raw_code != sum_bits(self):
            raise DomainError("raw_code does not match the bitstream population count")

    @property
    def triggers(self) -> int:
        return self.bitstream.shape[0]

    @property
    def n_taps(self) -> int:
        return self.bitstream.shape[1]

    @property
    def trigger_codes(self) -> np.ndarray:
        """Per-trigger thermometer sums."""
        return np.count_nonzero(self.bitstream, axis=1)

    def __eq__(self, other):
        # The ground-truth echo is simulation-only and excluded from equality.
        if not isinstance(other, Measurement):
            return NotImplemented
        return (
            self.coarse == other.coarse
            and self.raw_code == other.raw_code
            and self.bitstream.shape == other.bitstream.shape
            and bool(np.array_equal(self.bitstream, other.bitstream))
        )

    def __repr__(self):
        return f"Measurement(coarse={self.coarse}, raw_code={self.raw_code}, shape={self.bitstream.shape})"


def sum_bits(m: Measurement) -> int:
    return int(np.count_nonzero(m.bitstream))


def fractional_offsets(
    config: ChannelConfig, clock: ClockModel, true_delay: int, rng: RandomSource
) -> tuple[int, np.ndarray]:
    """Coarse count and per-trigger fractional delay (int64 fs) for one conversion."""
    if true_delay < 0:
        raise DomainError(f"negative delay {true_delay} fs")
    edges = rng.substream(STREAM_EDGE)
    if config.coarse_enabled:
        coarse = coarse_count(clock, true_delay, edges)
    else:
        if true_delay >= clock.nominal_period:
            raise RangeExceededError(
                f"delay {true_delay} fs >= period {int(clock.nominal_period)} fs with coarse counter disabled"
            )
        coarse = 0
    fractional = int(true_delay) - int(edge_time(clock, coarse, edges))
    offsets = np.full(config.triggers_per_measurement, fractional, dtype=np.int64)
    if config.input_jitter_sigma:
        offsets += rng.substream(STREAM_INPUT).normal_fs(config.input_jitter_sigma, offsets.shape)
    return coarse, offsets


def convert(
    config: ChannelConfig,
    bank: ReferenceBank,
    clock: ClockModel,
    true_delay: int,
    rng: RandomSource,
) -> Measurement:
    """Digitize one delay into a coarse count and a triggers x taps bitstream.

    The coarse counter locates the last (jittered) clock edge before the event;
    the remainder is compared against every tap on every trigger with a strict
    ``>``. Randomness is drawn from fixed sub-streams of ``rng`` (edges, input
    jitter, tap jitter), so the result depends only on the seed path.
    """
    if config.n_taps != bank.n_taps:
        raise ConfigurationError(f"channel has {config.n_taps} taps but bank has {bank.n_taps}")
    coarse, offsets = fractional_offsets(config, clock, true_delay, rng)
    thresholds = bank.sample_thresholds(rng.substream(STREAM_TAP), config.triggers_per_measurement)
    bits = offsets[:, None] > thresholds
    return Measurement(coarse, bits, int(np.count_nonzero(bits)), Duration(int(true_delay)))


def decode_uncalibrated(raw_code: int, config: ChannelConfig, period: int) -> Duration:
    """Linear decode ``raw_code / (triggers * n_taps) * period``, rounded half-up."""
    denom = config.max_code
    if not 0 <= raw_code <= denom:
        raise DomainError(f"raw code {raw_code} outside [0, {denom}]")
    return Duration((2 * raw_code * int(period) + denom) // (2 * denom))


def combine_coarse_fine(coarse: int, fine: int, clock: ClockModel) -> Duration:
    if not 0 <= fine < clock.nominal_period:
        raise DomainError(f"fine part {fine} fs outside [0, {int(clock.nominal_period)})")
    if coarse < 0:
        raise DomainError("coarse count must be non-negative")
    return Duration(coarse) * int(clock.nominal_period) + int(fine)


def split_delay(delay: int, clock: ClockModel) -> tuple[int, Duration]:
    """Inverse of ``combine_coarse_fine`` on the nominal grid."""
    if delay < 0:
        raise DomainError("negative delay")
    coarse, fine = divmod(int(delay), int(clock.nominal_period))
    return coarse, Duration(fine)


def decode_measurement(m: Measurement, config: ChannelConfig, clock: ClockModel) -> Duration:
    """Full-range raw estimate: coarse periods plus the linear fine decode."""
    fine = decode_uncalibrated(m.raw_code, config, clock.nominal_period)
    return Duration(m.coarse) * int(clock.nominal_period) + fine


def batch_codes(
    config: ChannelConfig,
    bank: ReferenceBank,
    clock: ClockModel,
    fractional: np.ndarray,
    rng: RandomSource,
) -> np.ndarray:
    """Raw codes for many single-period conversions at once.

    Statistically identical to calling ``convert`` per delay (edge-0 jitter,
    input jitter and tap jitter are all drawn), but the variates come from one
    batch stream, so individual codes are not bit-identical to ``convert``.
    ``fractional`` must lie in ``[0, period)``.
    """
    fractional = np.asarray(fractional, dtype=np.int64)
    n, triggers = len(fractional), config.triggers_per_measurement
    offsets = np.repeat(fractional, triggers)
    if clock.cycle_jitter_sigma:
        offsets -= np.repeat(rng.normal_fs(clock.cycle_jitter_sigma, n), triggers)
    if config.input_jitter_sigma:
        offsets += rng.normal_fs(config.input_jitter_sigma, n * triggers)
    if bank.tap_jitter_sigma:
        thresholds = bank.static_thresholds + rng.normal_fs(bank.tap_jitter_sigma, (n * triggers, bank.n_taps))
        codes = np.count_nonzero(offsets[:, None] > thresholds, axis=1)
    else:
        # count of thresholds strictly below each offset
        codes = np.searchsorted(np.sort(bank.static_thresholds), offsets, side="left")
    return codes.reshape(n, triggers).sum(axis=1)
