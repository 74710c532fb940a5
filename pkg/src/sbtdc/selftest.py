"""Fast invariant checks behind ``sbtdc selftest``."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .calibration import code_density_calibrate
from .channel import ChannelConfig, combine_coarse_fine, convert, decode_uncalibrated, split_delay
from .errors import BudgetExceededError, IntegrityError
from .readout import (
    DeviceConfig,
    Frame,
    FrameType,
    assemble_measurements,
    crc32,
    decode_stream,
    encode_frame,
    reconfigure,
    run_trigger,
)
from .reference_bank import build_bank
from .timebase import PS, ClockModel, RandomSource


def _linearity(clock: ClockModel) -> bool:
    bank = build_bank(600, clock.nominal_period, 0, 0, RandomSource(0))
    chan = ChannelConfig(600, 1)
    for d in range(0, int(clock.nominal_period), 5 * PS):
        m = convert(chan, bank, clock, d, RandomSource(0))
        if abs(decode_uncalibrated(m.raw_code, chan, clock.nominal_period) - d) >= bank.pitch:
            return False
    return True


def _thermometer(clock: ClockModel) -> bool:
    bank = build_bank(600, clock.nominal_period, 0, 0, RandomSource(0))
    chan = ChannelConfig(600, 4)
    for d in np.linspace(0, int(clock.nominal_period) - 1, 37).astype(int):
        bits = convert(chan, bank, clock, int(d), RandomSource(1)).bitstream
        if (np.diff(bits.astype(int), axis=1) > 0).any():
            return False
    return True


def _determinism(device: DeviceConfig, seed: int) -> bool:
    dev = reconfigure(device, 3, device.n_taps, 50)
    delays = [100 * PS, 1234 * PS, 2999 * PS]
    a = b"".join(encode_frame(f) for f in run_trigger(dev, delays, RandomSource(seed)))
    b = b"".join(encode_frame(f) for f in run_trigger(dev, delays, RandomSource(seed)))
    return a == b


def _popcount(device: DeviceConfig, seed: int) -> bool:
    dev = reconfigure(device, 4, device.n_taps, 200)
    frames = run_trigger(dev, [0, 700 * PS, 1500 * PS, 9000 * PS], RandomSource(seed))
    return all(m.raw_code == int(np.count_nonzero(m.bitstream)) for _, m in assemble_measurements(frames))


def _protocol() -> bool:
    if crc32(b"123456789") != 0xCBF43926:
        return False
    frame = encode_frame(Frame(FrameType.ACK, 0, 0))
    for bit in range(len(frame) * 8):
        bad = bytearray(frame)
        bad[bit // 8] ^= 1 << (bit % 8)
        frames, errors = decode_stream(bytes(bad))
        if frames or not errors:
            return False
    return decode_stream(frame)[0] == [Frame(FrameType.ACK, 0, 0)]


def _budget(device: DeviceConfig) -> bool:
    dev = replace(device, tap_budget=max(device.tap_budget, 600))
    too_many = dev.tap_budget // 600 + 1
    try:
        reconfigure(dev, too_many, 600, 10)
    except BudgetExceededError:
        return True
    return False


def _calibration(device: DeviceConfig, seed: int) -> bool:
    chan = ChannelConfig(device.n_taps, 1)
    hist, table = code_density_calibrate(
        chan, device.bank, device.clock, 100 * (chan.max_code + 1), RandomSource(seed)
    )
    return int(hist.counts.sum()) == hist.n_samples and bool((np.diff(table.code_to_time) >= 0).all())


def _range_extension(clock: ClockModel, seed: int) -> bool:
    clock = replace(clock, cycle_jitter_sigma=0, drift_ppm=0)
    bank = build_bank(600, clock.nominal_period, 1500, 5 * PS, RandomSource(seed))
    chan = ChannelConfig(600, 20)
    period = int(clock.nominal_period)
    for frac in (0, 1 * PS, 1499 * PS, 2999 * PS):
        ref = convert(chan, bank, clock, frac, RandomSource(seed))
        for k in (1, 7, 333):
            m = convert(chan, bank, clock, frac + k * period, RandomSource(seed))
            if m.coarse != k or not np.array_equal(m.bitstream, ref.bitstream):
                return False
        c, f = split_delay(frac + 5 * period, clock)
        if combine_coarse_fine(c, f, clock) != frac + 5 * period:
            return False
    return True


def run_selftest(device: DeviceConfig, seed: int) -> dict:
    clock = device.clock
    checks = {}
    checks["noise_free_linearity"] = _linearity(clock)
    checks["thermometer_prefix"] = _thermometer(clock)
    checks["wire_determinism"] = _determinism(device, seed)
    checks["popcount_consistency"] = _popcount(device, seed)
    try:
        checks["protocol_integrity"] = _protocol()
    except IntegrityError:
        checks["protocol_integrity"] = False
    checks["budget_safety"] = _budget(device)
    checks["calibration_conservation_monotone"] = _calibration(device, seed)
    checks["range_extension_neutral"] = _range_extension(clock, seed)
    return {"seed": seed, "checks": checks}
