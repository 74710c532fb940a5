"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s``; the collected lines
are repeated in the terminal summary.
"""
import json
import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import edge_jitter_added_rms, resolution as resolution_oracle
from sbtdc.calibration import code_density_calibrate, compute_dnl_inl, linear_table, transfer_inl
from sbtdc.channel import ChannelConfig, convert, decode_measurement, decode_uncalibrated
from sbtdc.cli import main
from sbtdc.errors import BudgetExceededError, IntegrityError, NeedMoreData
from sbtdc.harness import GeneratorModel, SweepSpec, estimate_resolution, run_sweep
from sbtdc.readout import (
    DeviceConfig,
    Frame,
    FrameType,
    assemble_measurements,
    crc32,
    decode_frame,
    decode_stream,
    encode_frame,
    reconfigure,
    run_trigger,
)
from sbtdc.reference_bank import build_bank
from sbtdc.timebase import NS, PS, US, STREAM_GENERATOR, ClockModel, RandomSource

pytestmark = pytest.mark.slow

PERIOD = 3000 * PS


def single_channel(triggers, tap_jitter=0, mismatch=0, clock=None, seed=0):
    dev = DeviceConfig(
        clock=clock or ClockModel(PERIOD), mismatch_sigma=mismatch, tap_jitter_sigma=tap_jitter, bank_seed=seed
    )
    return reconfigure(dev, 1, 600, triggers)


def test_criterion_1_accuracy(record_criterion):
    dev = single_channel(1000, tap_jitter=5 * PS)
    gen = GeneratorModel.create(20 * PS, 0, RandomSource(0).substream(STREAM_GENERATOR))
    t0 = time.perf_counter()
    rep = run_sweep(SweepSpec(0, 3000 * PS, 50 * PS, 1000, calibrated=True, seed=0), dev, gen)
    elapsed = time.perf_counter() - t0
    ok = rep.rms_error <= 25 * PS and rep.max_abs_error <= 60 * PS and elapsed <= 60
    record_criterion(
        1,
        ok,
        f"rms {rep.rms_error / PS:.2f} ps (<= 25), max {rep.max_abs_error / PS:.2f} ps (<= 60), "
        f"{elapsed:.1f} s (<= 60), generator offset {gen.systematic_error / PS:+.3f} ps",
    )
    assert ok


def test_criterion_2_resolution(record_criterion):
    ideal = estimate_resolution(single_channel(1), 1502500, 100 * PS, 1)
    dev = single_channel(10_000, tap_jitter=5 * PS)
    base = 1502500
    jittered = int(estimate_resolution(dev, base, 20 * PS, 10_000, seed=0))
    oracle = resolution_oracle(base, dev.bank.static_thresholds, 5 * PS, 10_000)
    ok = ideal == 5 * PS and jittered < 5 * PS and abs(jittered - oracle) <= 0.2 * oracle
    record_criterion(
        2,
        ok,
        f"ideal {int(ideal)} fs (== 5000), jittered {jittered} fs (< 5000), "
        f"oracle {oracle:.1f} fs, deviation {100 * (jittered / oracle - 1):+.1f}% (within 20%)",
    )
    assert ok


def test_criterion_3_range_extension(record_criterion):
    # exact part: zero clock jitter, delays up to 1 us
    clock = ClockModel(PERIOD)
    bank = build_bank(600, PERIOD, 1500, 5 * PS, RandomSource(11))
    chan = ChannelConfig(600, 50)
    fine_only = replace(chan, coarse_enabled=False)
    rng = np.random.default_rng(3)
    exact = True
    cases = 0
    for frac in rng.integers(0, PERIOD, 40):
        frac = int(frac)
        ref = convert(fine_only, bank, clock, frac, RandomSource(5))
        ref_err = int(decode_measurement(ref, fine_only, clock)) - frac
        for k in (1, 17, 100, (US - frac) // PERIOD):
            d = frac + k * PERIOD
            m = convert(chan, bank, clock, d, RandomSource(5))
            exact &= m.coarse == k and int(decode_measurement(m, chan, clock)) - d == ref_err
            cases += 1
    # jittered part: 1 ps per edge
    jclock = ClockModel(PERIOD, cycle_jitter_sigma=1 * PS)
    ibank = build_bank(600, PERIOD, 0, 5 * PS, RandomSource(0))
    chan = ChannelConfig(600, 200)
    frac, trials = 1000 * PS, 300
    growth_ok, details = True, []
    for k in (1, 10, 100, 333):
        added = []
        for s in range(trials):
            base = decode_measurement(convert(chan, ibank, clock, frac, RandomSource(s)), chan, clock) - frac
            d = frac + k * PERIOD
            m = convert(chan, ibank, jclock, d, RandomSource(s))
            added.append(int(decode_measurement(m, chan, jclock)) - d - int(base))
        rms = float(np.sqrt(np.mean(np.square(added))))
        oracle = edge_jitter_added_rms(frac, PERIOD, 600, 5 * PS, 1 * PS, 200, trials, seed=k)
        ok_k = rms <= 1.3 * np.sqrt(k) * PS and abs(rms - oracle) <= 0.3 * oracle
        growth_ok &= ok_k
        details.append(f"k={k}: {rms:.0f} fs vs MC {oracle:.0f} fs")
    ok = exact and growth_ok
    record_criterion(
        3, ok, f"exact coarse+fine on {cases} cases up to 1 us: {exact}; jittered added rms " + ", ".join(details)
    )
    assert ok


def test_criterion_4_multichannel(record_criterion):
    dev = reconfigure(DeviceConfig(tap_budget=60000, tap_jitter_sigma=5 * PS, mismatch_sigma=1500), 100, 600, 1000)
    delays = [int(d) for d in np.linspace(0, 2999 * PS, 100)]
    t0 = time.perf_counter()
    frames = run_trigger(dev, delays, RandomSource(0))
    wire = b"".join(encode_frame(f) for f in frames)
    decoded, errors = decode_stream(wire)
    meas = assemble_measurements(decoded)
    elapsed = time.perf_counter() - t0
    consistent = len(meas) == 100 and not errors and all(
        m.raw_code == int(np.count_nonzero(m.bitstream)) and m.triggers == 1000 for _, m in meas
    )
    before = (dev.n_channels, dev.channels, dev.config_generation)
    try:
        reconfigure(dev, 101, 600, 1000)
        rejected = False
    except BudgetExceededError:
        rejected = True
    unchanged = (dev.n_channels, dev.channels, dev.config_generation) == before
    ok = elapsed <= 30 and consistent and rejected and unchanged
    record_criterion(
        4,
        ok,
        f"100x600x1000 in {elapsed:.1f} s (<= 30), {len(frames)} frames self-consistent: {consistent}, "
        f"101 channels rejected: {rejected}, state unchanged: {unchanged}",
    )
    assert ok


def test_criterion_5_calibration_benefit(record_criterion):
    clock = ClockModel(PERIOD)
    chan = ChannelConfig(600, 1)
    # The pass/fail metric is the offset of each decoded code from its true bin
    # centre. The histogram INL (cumulative DNL) is reported alongside it.
    lines, hist_inl, hits, cal_ok = [], [], 0, True
    for seed in range(10):
        bank = build_bank(600, PERIOD, 1500, 0, RandomSource(seed))
        raw_inl = np.nanmax(np.abs(transfer_inl(linear_table(chan, PERIOD), bank)))
        hist, table = code_density_calibrate(chan, bank, clock, 2_000_000, RandomSource(seed).substream(99))
        hist_inl.append(f"{compute_dnl_inl(hist, PERIOD, 600).max_abs_inl:.2f}")
        cal_inl = np.nanmax(np.abs(transfer_inl(table.code_to_time, bank)))
        hits += raw_inl >= 2
        cal_ok &= cal_inl <= 1
        lines.append(f"{raw_inl:.2f}/{cal_inl:.2f}")
    ok = cal_ok and hits >= 8
    record_criterion(
        5,
        ok,
        f"calibrated max|INL| <= 1 LSB on all banks: {cal_ok}; uncalibrated >= 2 LSB on {hits}/10 banks "
        f"(need 8); raw/calibrated per seed: {' '.join(lines)}; histogram INL per seed: {' '.join(hist_inl)}",
    )
    assert ok


def _crc_bitwise(data):
    crc = 0xFFFFFFFF
    for b in data:
        crc ^= b
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def test_criterion_6_protocol(record_criterion):
    rng = np.random.default_rng(6)
    types = list(FrameType)
    mismatches = 0
    n = 100_000
    for i in range(n):
        f = Frame(
            types[int(rng.integers(len(types)))],
            int(rng.integers(256)),
            int(rng.integers(2**32)),
            rng.bytes(int(rng.integers(0, 64))),
        )
        raw = encode_frame(f)
        got, used = decode_frame(raw)
        mismatches += got != f or used != len(raw)
    ref = encode_frame(Frame(FrameType.MEASUREMENT, 9, 1234, bytes(range(32))))
    detected = 0
    for bit in range(len(ref) * 8):
        bad = bytearray(ref)
        bad[bit // 8] ^= 1 << (bit % 8)
        frames, errors = decode_stream(bytes(bad))
        try:
            decode_frame(bytes(bad))
            raised = False
        except (IntegrityError, NeedMoreData):
            raised = True
        detected += not frames and bool(errors) and raised
    check = crc32(b"123456789")
    ok = mismatches == 0 and detected == len(ref) * 8 and check == 0xCBF43926 == _crc_bitwise(b"123456789")
    record_criterion(
        6,
        ok,
        f"{n} frames, {mismatches} mismatches; {detected}/{len(ref) * 8} bit flips detected; "
        f"CRC check value {check:#010x}",
    )
    assert ok


def test_criterion_7_determinism(tmp_path, record_criterion):
    cfg = tmp_path / "device.json"
    cfg.write_text(
        json.dumps(
            {
                "clock": {"period_fs": PERIOD, "jitter_fs": 1000, "drift_ppm": 0},
                "bank": {"n_taps": 600, "mismatch_fs": 1500, "tap_jitter_fs": 5000, "seed": 2},
                "device": {"n_channels": 2, "tap_budget": 60000, "triggers": 50},
            }
        )
    )
    c = ["--config", str(cfg), "--seed", "42"]
    commands = {
        "sweep": ["sweep", *c, "--stop", "3000", "--step", "250", "--capture", "{dir}/cap.tdcc", "--out", "{dir}/s.csv"],
        "sweep-svg": ["sweep", *c, "--stop", "3000", "--step", "250", "--calibrated", "--out", "{dir}/s.svg"],
        "calibrate": ["calibrate", *c, "--samples-per-bin", "100", "--out", "{dir}/cal.tdcc"],
        "characterize": ["characterize", *c, "--samples-per-bin", "100", "--repeats", "30", "--out", "{dir}/ch.json"],
        "decode": ["decode", "{dir}/cap.tdcc", *c, "--out", "{dir}/d.csv"],
        "selftest": ["selftest", *c, "--out", "{dir}/t.json"],
    }
    outputs = {}
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        for name, argv in commands.items():
            rc = main([a.format(dir=d) for a in argv])
            assert rc == 0, name
        outputs[run] = {p.name: p.read_bytes() for p in sorted(d.iterdir())}
    same = outputs["a"] == outputs["b"]
    record_criterion(
        7, same, f"{len(commands)} subcommand runs, {len(outputs['a'])} output files byte-identical: {same}"
    )
    assert same


def test_criterion_8_noise_free_linearity(record_criterion):
    clock = ClockModel(PERIOD)
    bank = build_bank(600, PERIOD, 0, 0, RandomSource(0))
    chan = ChannelConfig(600, 1)
    worst = 0
    grid = range(0, PERIOD, 5 * PS)
    for d in grid:
        m = convert(chan, bank, clock, d, RandomSource(0))
        worst = max(worst, abs(int(decode_uncalibrated(m.raw_code, chan, PERIOD)) - d))
    ok = worst < bank.pitch
    record_criterion(8, ok, f"{len(grid)} delays, worst |error| {worst} fs (< {int(bank.pitch)} fs)")
    assert ok
