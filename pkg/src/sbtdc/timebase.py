"""Integer femtosecond time, the reference clock model and seeded noise.

Every time quantity in the package is an integer count of femtoseconds.
``Duration`` is an ``int`` subclass whose arithmetic refuses to leave the
signed 128-bit range; bulk data (threshold matrices, edge grids) is carried in
``numpy.int64`` arrays instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError, TimeRangeError

FS = 1
PS = 1000
NS = 1000 * PS
US = 1000 * NS

# Signed 128-bit range: 64 bits of femtoseconds would stop at about 9200 s.
DURATION_MIN = -(2**127)
DURATION_MAX = 2**127 - 1

DEFAULT_PERIOD = 3000 * PS

# Sub-stream tags; the key path of a RandomSource is a tuple of these and indices.
STREAM_BANK = 1
STREAM_EDGE = 2
STREAM_TAP = 3
STREAM_INPUT = 4
STREAM_CHANNEL = 5
STREAM_STIMULUS = 6
STREAM_GENERATOR = 7
STREAM_POINT = 8
STREAM_REPEAT = 9


def _checked(value: int) -> int:
    if not DURATION_MIN <= value <= DURATION_MAX:
        raise TimeRangeError(f"{value} fs is outside the signed 128-bit range")
    return value


class Duration(int):
    """Signed femtosecond count with overflow-checked arithmetic."""

    def __new__(cls, femtoseconds: int = 0) -> "Duration":
        if isinstance(femtoseconds, float) or not isinstance(femtoseconds, (int, np.integer)):
            raise TypeError("Duration requires an integer femtosecond count")
        return super().__new__(cls, _checked(int(femtoseconds)))

    @classmethod
    def from_ps(cls, picoseconds: float | int | Fraction) -> "Duration":
        return cls(round(Fraction(picoseconds) * PS))

    @property
    def femtoseconds(self) -> int:
        return int(self)

    @property
    def ps(self) -> float:
        return int(self) / PS

    def __add__(self, other):
        if not isinstance(other, (int, np.integer)):
            return NotImplemented
        return Duration(int(self) + int(other))

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, (int, np.integer)):
            return NotImplemented
        return Duration(int(self) - int(other))

    def __rsub__(self, other):
        if not isinstance(other, (int, np.integer)):
            return NotImplemented
        return Duration(int(other) - int(self))

    def __mul__(self, other):
        if not isinstance(other, (int, np.integer)):
            return NotImplemented
        return Duration(int(self) * int(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Duration(-int(self))

    def __abs__(self):
        return Duration(abs(int(self)))

    def __repr__(self) -> str:
        return f"Duration({int(self)} fs)"


class RandomSource:
    """Counter-based random stream addressed by ``(seed, key path)``.

    Backed by Philox; two instances with the same seed and key produce the
    same variates. ``substream`` derives a child stream whose output does not
    depend on how much of the parent has been consumed, so channels, triggers
    and edges can be addressed in any evaluation order.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._generator: Optional[np.random.Generator] = None

    def substream(self, *indices: int) -> "RandomSource":
        return RandomSource(self.seed, self.key + tuple(indices))

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
            self._generator = np.random.Generator(np.random.Philox(seq))
        return self._generator

    def normal_fs(self, sigma: int, size=None) -> np.ndarray:
        """Zero-mean Gaussian deviates rounded to whole femtoseconds (int64)."""
        if sigma == 0:
            return np.zeros(size if size is not None else (), dtype=np.int64)
        return np.rint(self.generator.normal(0.0, float(sigma), size)).astype(np.int64)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, key={self.key})"


def gaussian(rng: RandomSource, sigma: int) -> Duration:
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    if sigma == 0:
        return Duration(0)
    return Duration(int(rng.normal_fs(sigma)))


@dataclass(frozen=True)
class ClockModel:
    nominal_period: int = DEFAULT_PERIOD
    cycle_jitter_sigma: int = 0
    drift_ppm: Fraction = field(default=Fraction(0))

    def __post_init__(self):
        if self.nominal_period <= 0:
            raise ConfigurationError("nominal_period must be positive")
        if self.cycle_jitter_sigma < 0:
            raise ConfigurationError("cycle_jitter_sigma must be non-negative")
        object.__setattr__(self, "nominal_period", Duration(self.nominal_period))
        object.__setattr__(self, "cycle_jitter_sigma", Duration(self.cycle_jitter_sigma))
        object.__setattr__(self, "drift_ppm", Fraction(self.drift_ppm))

    @property
    def actual_period(self) -> Fraction:
        return self.nominal_period * (1 + self.drift_ppm / 1_000_000)

    def nominal_edge(self, k: int) -> Duration:
        """Jitter-free edge ``k`` including drift, rounded to the nearest fs."""
        return Duration(round(k * self.actual_period))


def edge_time(clock: ClockModel, k: int, rng: RandomSource) -> Duration:
    """Time of clock edge ``k``; the jitter deviate comes from ``rng.substream(k)``."""
    if k < 0:
        raise DomainError("edge index must be non-negative")
    t = clock.nominal_edge(k)
    if clock.cycle_jitter_sigma:
        t = t + gaussian(rng.substream(k), clock.cycle_jitter_sigma)
    return t


def coarse_count(clock: ClockModel, t: int, rng: RandomSource) -> int:
    """Largest ``k`` with ``edge_time(k) <= t``; 0 if even edge 0 is later than ``t``."""
    k = max(0, int(Fraction(int(t)) // clock.actual_period))
    while k > 0 and edge_time(clock, k, rng) > t:
        k -= 1
    while edge_time(clock, k + 1, rng) <= t:
        k += 1
    return k
