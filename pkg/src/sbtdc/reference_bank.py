"""Reference tap ladder: the thresholds every input edge is compared against.

Tap ``i`` sits at ``i * period / n_taps`` plus a static mismatch drawn once
when the bank is built, plus fresh Gaussian jitter on every trigger.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError
from .timebase import PS, Duration, RandomSource, gaussian

DEFAULT_N_TAPS = 600
DEFAULT_MISMATCH = 1500  # 30% of the 5 ps default pitch


@dataclass(frozen=True)
class ReferenceTap:
    index: int
    nominal_offset: Duration
    static_error: Duration
    jitter_sigma: Duration


@dataclass(frozen=True, eq=False)
class ReferenceBank:
    period: Duration
    mismatch_sigma: Duration
    tap_jitter_sigma: Duration
    nominal: np.ndarray  # int64 fs, one per tap
    static_error: np.ndarray  # int64 fs, frozen at construction

    def __post_init__(self):
        self.nominal.setflags(write=False)
        self.static_error.setflags(write=False)

    @property
    def n_taps(self) -> int:
        return len(self.nominal)

    @property
    def pitch(self) -> Duration:
        return Duration(round(self.period / self.n_taps))

    @property
    def static_thresholds(self) -> np.ndarray:
        """Jitter-free thresholds (nominal + static error), in tap order."""
        return self.nominal + self.static_error

    @property
    def taps(self) -> list[ReferenceTap]:
        return [
            ReferenceTap(i, Duration(int(n)), Duration(int(e)), self.tap_jitter_sigma)
            for i, (n, e) in enumerate(zip(self.nominal, self.static_error))
        ]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.period, self.mismatch_sigma, self.tap_jitter_sigma], dtype=np.int64).tobytes())
        h.update(self.nominal.astype("<i8").tobytes())
        h.update(self.static_error.astype("<i8").tobytes())
        return h.hexdigest()

    def sample_thresholds(self, rng: RandomSource, triggers: int) -> np.ndarray:
        """``(triggers, n_taps)`` int64 threshold matrix, one fresh jitter deviate per cell.

        Cell ``(t, i)`` is element ``t * n_taps + i`` of ``rng``'s stream, so the
        matrix is fixed by ``rng`` alone.
        """
        thresholds = np.broadcast_to(self.static_thresholds, (triggers, self.n_taps))
        if self.tap_jitter_sigma:
            return thresholds + rng.normal_fs(self.tap_jitter_sigma, (triggers, self.n_taps))
        return np.array(thresholds)

    def __eq__(self, other):
        if not isinstance(other, ReferenceBank):
            return NotImplemented
        return self.fingerprint() == other.fingerprint()

    def __hash__(self):
        return hash(self.fingerprint())


def nominal_offsets(n_taps: int, period: int) -> np.ndarray:
    """``i * period / n_taps`` rounded half-up to whole femtoseconds."""
    i = np.arange(n_taps, dtype=np.int64)
    return (2 * i * int(period) + n_taps) // (2 * n_taps)


def build_bank(
    n_taps: int,
    period: int,
    mismatch_sigma: int,
    tap_jitter_sigma: int,
    rng: RandomSource,
) -> ReferenceBank:
    if n_taps < 2:
        raise ConfigurationError(f"n_taps must be >= 2, got {n_taps}")
    if period <= 0:
        raise ConfigurationError("period must be positive")
    if mismatch_sigma < 0 or tap_jitter_sigma < 0:
        raise ConfigurationError("sigmas must be non-negative")
    if 2 * int(period) < n_taps:
        raise ConfigurationError("period too short for a strictly increasing ladder")
    static = rng.normal_fs(mismatch_sigma, n_taps) if mismatch_sigma else np.zeros(n_taps, dtype=np.int64)
    return ReferenceBank(
        period=Duration(period),
        mismatch_sigma=Duration(mismatch_sigma),
        tap_jitter_sigma=Duration(tap_jitter_sigma),
        nominal=nominal_offsets(n_taps, period),
        static_error=np.asarray(static, dtype=np.int64),
    )


def tap_threshold(bank: ReferenceBank, tap_index: int, rng: RandomSource) -> Duration:
    """Threshold of one tap for one trigger: nominal + static error + fresh jitter."""
    if not 0 <= tap_index < bank.n_taps:
        raise UsageError(f"tap index {tap_index} outside [0, {bank.n_taps})")
    base = Duration(int(bank.nominal[tap_index]) + int(bank.static_error[tap_index]))
    return base + gaussian(rng, bank.tap_jitter_sigma)


def describe(bank: ReferenceBank) -> str:
    return (
        f"{bank.n_taps} taps over {bank.period / PS:g} ps "
        f"(pitch {bank.pitch / PS:g} ps, mismatch {bank.mismatch_sigma / PS:g} ps, "
        f"jitter {bank.tap_jitter_sigma / PS:g} ps)"
    )
