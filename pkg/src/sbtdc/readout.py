"""Multi-channel device model and the byte-stream readout protocol.

Frame layout (big-endian)::

    A5 5A | version u8 | type u8 | channel u8 | sequence u32 | payload_len u16 | payload | crc32 u32

The CRC (standard reflected CRC-32, as in ``zlib.crc32``) covers version
through payload. A measurement whose packed bitstream does not fit one
payload is split by trigger range over consecutive frames; every fragment is
self-consistent (its ``raw_code`` is the popcount of its own bits).
"""
from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterator, Optional

import numpy as np

from .channel import ChannelConfig, Measurement, convert
from .errors import (
    BudgetExceededError,
    ConfigurationError,
    IntegrityError,
    NeedMoreData,
    UnsupportedVersionError,
    UsageError,
)
from .reference_bank import ReferenceBank, build_bank
from .timebase import STREAM_CHANNEL, ClockModel, RandomSource

SYNC = b"\xa5\x5a"
PROTOCOL_VERSION = 1
MAX_PAYLOAD = 0xFFFF
MAX_CHANNELS = 128

_HEADER = struct.Struct(">2sBBBIH")  # sync .. payload_len
_CRC = struct.Struct(">I")
HEADER_SIZE = _HEADER.size  # 11
MIN_FRAME = HEADER_SIZE + _CRC.size


class FrameType(enum.IntEnum):
    MEASUREMENT = 0x01
    COMMAND = 0x02
    ACK = 0x03
    ERROR = 0x04


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


@dataclass(frozen=True)
class Frame:
    frame_type: int
    channel_id: int
    sequence: int
    payload: bytes = b""
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        if not 0 <= self.channel_id <= 0xFF:
            raise UsageError("channel_id must fit one byte")
        if not 0 <= self.sequence <= 0xFFFFFFFF:
            raise UsageError("sequence must fit four bytes")
        if len(self.payload) > MAX_PAYLOAD:
            raise UsageError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")
        if not 0 <= self.frame_type <= 0xFF or not 0 <= self.version <= 0xFF:
            raise UsageError("version and frame_type must fit one byte")


def encode_frame(frame: Frame) -> bytes:
    head = _HEADER.pack(
        SYNC, frame.version, frame.frame_type, frame.channel_id, frame.sequence, len(frame.payload)
    )
    body = head[2:] + frame.payload
    return head + frame.payload + _CRC.pack(crc32(body))


def decode_frame(data: bytes) -> tuple[Frame, int]:
    """Decode one frame from the start of ``data``; returns ``(frame, bytes consumed)``.

    Raises ``NeedMoreData`` if ``data`` ends mid-frame, ``IntegrityError`` on a
    missing sync marker or CRC mismatch and ``UnsupportedVersionError`` for a
    CRC-valid frame of another protocol version.
    """
    if len(data) < 2:
        raise NeedMoreData("sync")
    if data[:2] != SYNC:
        raise IntegrityError("not positioned at a sync marker")
    if len(data) < HEADER_SIZE:
        raise NeedMoreData("header")
    _, version, ftype, channel, seq, plen = _HEADER.unpack_from(data)
    end = HEADER_SIZE + plen + _CRC.size
    if len(data) < end:
        raise NeedMoreData("payload")
    (crc,) = _CRC.unpack_from(data, HEADER_SIZE + plen)
    if crc != crc32(bytes(data[2 : HEADER_SIZE + plen])):
        raise IntegrityError("CRC mismatch")
    if version != PROTOCOL_VERSION:
        raise UnsupportedVersionError(f"protocol version {version}")
    return Frame(ftype, channel, seq, bytes(data[HEADER_SIZE : HEADER_SIZE + plen]), version), end


class FrameDecoder:
    """Incremental stream decoder that drops corrupt frames and resynchronizes.

    After a failed candidate the decoder skips past its sync marker and
    searches for the next ``A5 5A``; bytes after the failed sync are kept, so
    a frame swallowed by a corrupted length field is still recovered.
    """

    def __init__(self):
        self._buf = bytearray()
        self.errors: list[IntegrityError] = []

    def feed(self, data: bytes) -> list[Frame]:
        self._buf += data
        return list(self._drain(final=False))

    def finish(self) -> list[Frame]:
        """Flush at end of stream; an incomplete trailing frame counts as corrupt."""
        frames = list(self._drain(final=True))
        self._buf.clear()
        return frames

    def _drain(self, final: bool) -> Iterator[Frame]:
        buf = self._buf
        while True:
            start = buf.find(SYNC)
            if start < 0:
                keep = 1 if buf[-1:] == SYNC[:1] and not final else 0
                if len(buf) > keep:
                    self.errors.append(IntegrityError(f"{len(buf) - keep} bytes without sync"))
                del buf[: len(buf) - keep]
                return
            if start:
                self.errors.append(IntegrityError(f"{start} bytes skipped before sync"))
                del buf[:start]
            try:
                frame, used = decode_frame(buf)
            except NeedMoreData:
                if not final:
                    return
                self.errors.append(IntegrityError("truncated frame at end of stream"))
                del buf[:2]
                continue
            except IntegrityError as exc:
                self.errors.append(exc)
                del buf[:2]
                continue
            del buf[:used]
            yield frame


def decode_stream(data: bytes) -> tuple[list[Frame], list[IntegrityError]]:
    dec = FrameDecoder()
    frames = dec.feed(data) + dec.finish()
    return frames, dec.errors


# --- measurement payload -------------------------------------------------

_PAYLOAD_HEAD = struct.Struct(">IHHIB")
FLAG_BITSTREAM = 0x01
FLAG_CALIBRATED = 0x02
FLAG_CONTINUES = 0x04


@dataclass(frozen=True, eq=False)
class MeasurementPayload:
    coarse: int
    triggers: int
    n_taps: int
    raw_code: int
    bitstream: Optional[np.ndarray] = None  # bool (triggers, n_taps)
    calibrated: bool = False
    continues: bool = False

    def __post_init__(self):
        if self.raw_code > self.triggers * self.n_taps:
            raise IntegrityError("raw_code exceeds triggers * n_taps")
        if self.bitstream is not None:
            if self.bitstream.shape != (self.triggers, self.n_taps):
                raise IntegrityError("bitstream shape does not match header")
            if int(np.count_nonzero(self.bitstream)) != self.raw_code:
                raise IntegrityError("bitstream popcount does not match raw_code")

    @property
    def flags(self) -> int:
        return (
            (FLAG_BITSTREAM if self.bitstream is not None else 0)
            | (FLAG_CALIBRATED if self.calibrated else 0)
            | (FLAG_CONTINUES if self.continues else 0)
        )

    def to_bytes(self) -> bytes:
        head = _PAYLOAD_HEAD.pack(self.coarse, self.triggers, self.n_taps, self.raw_code, self.flags)
        if self.bitstream is None:
            return head
        # tap-major: all triggers of tap 0, then tap 1, ...; MSB first, zero padded
        return head + np.packbits(self.bitstream.T.reshape(-1)).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "MeasurementPayload":
        if len(data) < _PAYLOAD_HEAD.size:
            raise IntegrityError("measurement payload too short")
        coarse, triggers, n_taps, raw, flags = _PAYLOAD_HEAD.unpack_from(data)
        body = data[_PAYLOAD_HEAD.size :]
        bits = None
        if flags & FLAG_BITSTREAM:
            n = triggers * n_taps
            if len(body) != (n + 7) // 8:
                raise IntegrityError("bitstream length does not match header")
            flat = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=n).astype(bool)
            bits = flat.reshape(n_taps, triggers).T.copy()
        elif body:
            raise IntegrityError("trailing bytes in measurement payload")
        return cls(coarse, triggers, n_taps, raw, bits, bool(flags & FLAG_CALIBRATED), bool(flags & FLAG_CONTINUES))

    def __eq__(self, other):
        if not isinstance(other, MeasurementPayload):
            return NotImplemented
        same_bits = (self.bitstream is None) == (other.bitstream is None) and (
            self.bitstream is None or np.array_equal(self.bitstream, other.bitstream)
        )
        return same_bits and (self.coarse, self.triggers, self.n_taps, self.raw_code, self.flags) == (
            other.coarse,
            other.triggers,
            other.n_taps,
            other.raw_code,
            other.flags,
        )


def max_triggers_per_frame(n_taps: int) -> int:
    return min(0xFFFF, (MAX_PAYLOAD - _PAYLOAD_HEAD.size) * 8 // n_taps)


def measurement_payloads(m: Measurement, with_bitstream: bool = True) -> list[MeasurementPayload]:
    if not with_bitstream:
        if m.triggers > 0xFFFF:
            raise UsageError("trigger count does not fit the payload header")
        return [MeasurementPayload(m.coarse, m.triggers, m.n_taps, m.raw_code)]
    step = max_triggers_per_frame(m.n_taps)
    if step < 1:
        raise UsageError(f"{m.n_taps} taps do not fit a single frame")
    out = []
    for start in range(0, m.triggers, step):
        bits = m.bitstream[start : start + step]
        out.append(
            MeasurementPayload(
                m.coarse,
                bits.shape[0],
                m.n_taps,
                int(np.count_nonzero(bits)),
                bits,
                continues=start + step < m.triggers,
            )
        )
    return out


def assemble_measurements(frames: list[Frame]) -> list[tuple[int, Measurement]]:
    """Rejoin measurement fragments into ``(channel_id, Measurement)`` pairs.

    Fragments of one measurement must arrive with consecutive sequence numbers.
    """
    out = []
    pending: dict[int, tuple[int, list[MeasurementPayload]]] = {}
    for f in frames:
        if f.frame_type != FrameType.MEASUREMENT:
            continue
        p = MeasurementPayload.from_bytes(f.payload)
        if f.channel_id in pending:
            last_seq, parts = pending.pop(f.channel_id)
            if f.sequence != last_seq + 1 or p.coarse != parts[0].coarse:
                raise IntegrityError(f"broken fragment chain on channel {f.channel_id}")
        else:
            parts = []
        parts.append(p)
        if p.continues:
            pending[f.channel_id] = (f.sequence, parts)
            continue
        if any(q.bitstream is None for q in parts):
            raise IntegrityError("measurement frames carry no bitstream")
        bits = np.concatenate([q.bitstream for q in parts], axis=0)
        out.append((f.channel_id, Measurement(parts[0].coarse, bits, sum(q.raw_code for q in parts))))
    if pending:
        raise IntegrityError(f"incomplete measurement on channels {sorted(pending)}")
    return out


# --- device model --------------------------------------------------------


@dataclass(frozen=True)
class DeviceConfig:
    n_channels: int = 1
    channels: tuple[ChannelConfig, ...] = ()
    tap_budget: int = 60000
    config_generation: int = 0
    clock: ClockModel = field(default_factory=ClockModel)
    mismatch_sigma: int = 0
    tap_jitter_sigma: int = 0
    bank_seed: int = 0

    def __post_init__(self):
        if not self.channels:
            object.__setattr__(self, "channels", tuple(ChannelConfig() for _ in range(self.n_channels)))
        if not 1 <= self.n_channels <= MAX_CHANNELS:
            raise ConfigurationError(f"n_channels must be in [1, {MAX_CHANNELS}]")
        if len(self.channels) != self.n_channels:
            raise ConfigurationError("one ChannelConfig per channel is required")
        if len({c.n_taps for c in self.channels}) != 1:
            raise ConfigurationError("all channels share one reference bank and tap count")
        used = self.total_taps
        if used > self.tap_budget:
            raise BudgetExceededError(used, self.tap_budget)

    @property
    def total_taps(self) -> int:
        return sum(c.n_taps for c in self.channels)

    @property
    def n_taps(self) -> int:
        return self.channels[0].n_taps

    @property
    def bank(self) -> ReferenceBank:
        return _bank_cache(
            self.n_taps, int(self.clock.nominal_period), self.mismatch_sigma, self.tap_jitter_sigma, self.bank_seed
        )

    def channel(self, i: int) -> ChannelConfig:
        return self.channels[i]


_BANKS: dict[tuple, ReferenceBank] = {}


def _bank_cache(n_taps, period, mismatch, jitter, seed) -> ReferenceBank:
    key = (n_taps, period, mismatch, jitter, seed)
    if key not in _BANKS:
        if len(_BANKS) > 32:
            _BANKS.clear()
        _BANKS[key] = build_bank(n_taps, period, mismatch, jitter, RandomSource(seed))
    return _BANKS[key]


def reconfigure(device: DeviceConfig, n_channels: int, taps_per_channel: int, triggers: int) -> DeviceConfig:
    """Return a new configuration; the input is never modified."""
    if n_channels < 1:
        raise ConfigurationError("n_channels must be >= 1")
    if taps_per_channel < 2:
        raise ConfigurationError("taps_per_channel must be >= 2")
    if n_channels * taps_per_channel > device.tap_budget:
        raise BudgetExceededError(n_channels * taps_per_channel, device.tap_budget)
    template = device.channels[0]
    chan = replace(template, n_taps=taps_per_channel, triggers_per_measurement=triggers)
    return replace(
        device,
        n_channels=n_channels,
        channels=tuple(chan for _ in range(n_channels)),
        config_generation=device.config_generation + 1,
    )


def channel_stream(rng: RandomSource, channel_id: int) -> RandomSource:
    return rng.substream(STREAM_CHANNEL, channel_id)


def run_trigger(
    device: DeviceConfig,
    delays: list[int],
    rng: RandomSource,
    sequence_start: int = 0,
    with_bitstream: bool = True,
) -> list[Frame]:
    """Convert one delay per channel and emit measurement frames in channel order."""
    if len(delays) != device.n_channels:
        raise UsageError(f"{len(delays)} delays for {device.n_channels} channels")
    bank = device.bank
    frames = []
    seq = sequence_start
    for ch, delay in enumerate(delays):
        m = convert(device.channel(ch), bank, device.clock, delay, channel_stream(rng, ch))
        for p in measurement_payloads(m, with_bitstream):
            frames.append(Frame(FrameType.MEASUREMENT, ch, seq, p.to_bytes()))
            seq += 1
    return frames


# --- configuration file --------------------------------------------------

_SCHEMA = {
    "clock": {"period_fs", "jitter_fs", "drift_ppm"},
    "bank": {"n_taps", "mismatch_fs", "tap_jitter_fs", "seed"},
    "device": {"n_channels", "tap_budget", "triggers", "input_jitter_fs", "coarse_enabled"},
}


def _check_keys(doc: dict, allowed: set, where: str):
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{where} must be an object")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")


def device_from_dict(doc: dict) -> DeviceConfig:
    _check_keys(doc, set(_SCHEMA), "config")
    for section, keys in _SCHEMA.items():
        _check_keys(doc.get(section, {}), keys, section)
    clk, bank, dev = doc.get("clock", {}), doc.get("bank", {}), doc.get("device", {})
    try:
        clock = ClockModel(
            int(clk.get("period_fs", 3_000_000)),
            int(clk.get("jitter_fs", 0)),
            Fraction(str(clk.get("drift_ppm", 0))),
        )
        chan = ChannelConfig(
            n_taps=int(bank.get("n_taps", 600)),
            triggers_per_measurement=int(dev.get("triggers", 1000)),
            input_jitter_sigma=int(dev.get("input_jitter_fs", 0)),
            coarse_enabled=bool(dev.get("coarse_enabled", True)),
        )
        n = int(dev.get("n_channels", 1))
        return DeviceConfig(
            n_channels=n,
            channels=tuple(chan for _ in range(n)),
            tap_budget=int(dev.get("tap_budget", 60000)),
            clock=clock,
            mismatch_sigma=int(bank.get("mismatch_fs", 0)),
            tap_jitter_sigma=int(bank.get("tap_jitter_fs", 0)),
            bank_seed=int(bank.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from exc


def device_to_dict(device: DeviceConfig) -> dict:
    chan = device.channels[0]
    drift = device.clock.drift_ppm
    return {
        "clock": {
            "period_fs": int(device.clock.nominal_period),
            "jitter_fs": int(device.clock.cycle_jitter_sigma),
            "drift_ppm": int(drift) if drift.denominator == 1 else str(drift),
        },
        "bank": {
            "n_taps": chan.n_taps,
            "mismatch_fs": device.mismatch_sigma,
            "tap_jitter_fs": device.tap_jitter_sigma,
            "seed": device.bank_seed,
        },
        "device": {
            "n_channels": device.n_channels,
            "tap_budget": device.tap_budget,
            "triggers": chan.triggers_per_measurement,
            "input_jitter_fs": chan.input_jitter_sigma,
            "coarse_enabled": chan.coarse_enabled,
        },
    }


def load_device_config(path) -> DeviceConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return device_from_dict(doc)


def canonical_config_json(device: DeviceConfig) -> str:
    return json.dumps(device_to_dict(device), sort_keys=True, separators=(",", ":"))
