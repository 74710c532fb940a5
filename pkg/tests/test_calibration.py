import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sbtdc.calibration import (
    CalibrationTable,
    CodeHistogram,
    apply_calibration,
    code_density_calibrate,
    compute_dnl_inl,
    decode_calibrated,
    linear_table,
    table_from_histogram,
    threshold_bins,
    transfer_inl,
)
from sbtdc.channel import ChannelConfig, convert
from sbtdc.errors import ConfigurationError, DomainError, IntegrityError
from sbtdc.reference_bank import build_bank
from sbtdc.timebase import PS, ClockModel, RandomSource

ONE = ChannelConfig(600, 1)
PERIOD = 3000 * PS


@pytest.fixture(scope="module")
def ideal_calibration():
    bank = build_bank(600, PERIOD, 0, 0, RandomSource(0))
    return code_density_calibrate(ONE, bank, ClockModel(), 10_000_000, RandomSource(1))


def test_ideal_table_follows_bin_centres(ideal_calibration):
    # Code c covers ((c - 1) * 5 ps, c * 5 ps], centre c * 5 ps - 2.5 ps.
    _, table = ideal_calibration
    codes = np.arange(1, 601)
    assert np.abs(table.code_to_time[1:] - (codes * 5 * PS - 2500)).max() < 2500


def test_ideal_table_endpoints(ideal_calibration):
    hist, table = ideal_calibration
    n, n0 = hist.n_samples, hist.counts[0]
    # code 0 needs d == 0 exactly; if seen it sits at its own midpoint, else it inherits code 1
    expected0 = (PERIOD * n0 + n) // (2 * n) if n0 else table.code_to_time[1]
    assert apply_calibration(table, 0) == expected0
    assert abs(apply_calibration(table, 600) - 2997_500) < 50
    assert abs(table.code_to_time[1] - 2500) < 50


def test_unobserved_code_zero_maps_to_half_pitch():
    bank = build_bank(600, PERIOD, 0, 0, RandomSource(0))
    hist, table = code_density_calibrate(ONE, bank, ClockModel(), 200 * 601, RandomSource(3))
    assert hist.counts[0] == 0
    assert apply_calibration(table, 0) == table.code_to_time[1]
    assert abs(apply_calibration(table, 0) - 2500) < 200


def test_histogram_conservation(ideal_calibration):
    hist, table = ideal_calibration
    assert hist.counts.sum() == hist.n_samples == 10_000_000
    assert (np.diff(table.code_to_time) >= 0).all()


def test_two_tap_closed_form():
    bank = build_bank(2, PERIOD, 0, 0, RandomSource(0))
    hist, table = code_density_calibrate(ChannelConfig(2, 1), bank, ClockModel(), 30_000, RandomSource(2))
    n1, n2 = hist.counts[1], hist.counts[2]
    assert hist.counts[0] == 0 and n1 + n2 == 30_000
    # midpoint rule: t1 = P * n1 / 2N, t2 = P * (n1 + n2 / 2) / N  =>  t2 - t1 = P / 2
    assert table.code_to_time[1] == (PERIOD * n1 + 30_000) // 60_000
    assert abs((table.code_to_time[2] - table.code_to_time[1]) - PERIOD // 2) <= 1
    assert table.code_to_time[0] == table.code_to_time[1]
    # n1 ~ Binomial(N, 1/2): t1 = 750 ps within 5 sigma
    assert abs(table.code_to_time[1] - 750 * PS) < 5 * 1500 * PS * 0.5 / np.sqrt(30_000)


def test_insufficient_samples():
    bank = build_bank(600, PERIOD, 0, 0, RandomSource(0))
    with pytest.raises(ConfigurationError):
        code_density_calibrate(ONE, bank, ClockModel(), 100 * 601 - 1, RandomSource(0))


def test_calibration_improves_linearity():
    bank = build_bank(600, PERIOD, 1500, 0, RandomSource(21))
    _, table = code_density_calibrate(ONE, bank, ClockModel(), 2_000_000, RandomSource(4))
    cal = np.nanmax(np.abs(transfer_inl(table.code_to_time, bank)))
    raw = np.nanmax(np.abs(transfer_inl(linear_table(ONE, PERIOD), bank)))
    assert cal < raw


def test_recalibration_idempotent():
    bank = build_bank(600, PERIOD, 1500, 2 * PS, RandomSource(3))
    a = code_density_calibrate(ONE, bank, ClockModel(), 100 * 601, RandomSource(8))[1]
    b = code_density_calibrate(ONE, bank, ClockModel(), 100 * 601, RandomSource(8))[1]
    assert a == b


def test_apply_is_lookup(ideal_calibration):
    _, table = ideal_calibration
    for c in (0, 1, 17, 300, 600):
        assert apply_calibration(table, c) == table.code_to_time[c]
    with pytest.raises(DomainError):
        apply_calibration(table, 601)
    with pytest.raises(DomainError):
        apply_calibration(table, -1)


def test_decode_calibrated_single_and_multi_trigger(ideal_calibration, clock):
    _, table = ideal_calibration
    bank = build_bank(600, PERIOD, 0, 0, RandomSource(0))
    m1 = convert(ONE, bank, clock, 1502_000, RandomSource(0))
    assert decode_calibrated(table, m1) == table.code_to_time[m1.raw_code]
    m = convert(ChannelConfig(600, 7), bank, clock, 1502_000, RandomSource(0))
    assert decode_calibrated(table, m) == table.code_to_time[301]


def _ideal_counts(per_bin=50):
    counts = np.full(601, per_bin)
    counts[0] = 0  # code 0 is a single point on a ladder that starts at 0
    return counts


def test_dnl_uniform_histogram():
    counts = _ideal_counts()
    rep = compute_dnl_inl(CodeHistogram(counts, int(counts.sum())), PERIOD, 600)
    assert np.allclose(rep.dnl, 0) and np.allclose(rep.inl, 0)
    assert rep.max_abs_dnl == pytest.approx(0)


def test_dnl_double_width_bin():
    counts = _ideal_counts()
    counts[200] = 100
    counts[201] = 0  # total width is fixed, so the neighbour goes missing
    rep = compute_dnl_inl(CodeHistogram(counts, int(counts.sum())), PERIOD, 600)
    assert rep.dnl[200] == pytest.approx(1.0)
    assert rep.dnl[201] == pytest.approx(-1.0)
    assert np.allclose(np.delete(rep.dnl, [200, 201]), 0)
    assert rep.inl[200] == pytest.approx(1.0) and rep.inl[201] == pytest.approx(0.0)


def test_dnl_empty_histogram():
    with pytest.raises(DomainError):
        compute_dnl_inl(CodeHistogram(np.zeros(601, dtype=int), 0), PERIOD, 600)


@given(st.lists(st.integers(min_value=0, max_value=1000), min_size=3, max_size=50))
def test_inl_is_running_sum_of_dnl(counts):
    counts = np.array(counts)
    if counts.sum() == 0:
        return
    rep = compute_dnl_inl(CodeHistogram(counts, int(counts.sum())), 1_000_000, len(counts) - 1)
    assert np.allclose(rep.inl, np.cumsum(rep.dnl), atol=1e-9)


def test_dnl_against_threshold_spacing_oracle():
    bank = build_bank(600, PERIOD, 1500, 0, RandomSource(17))
    hist, _ = code_density_calibrate(ONE, bank, ClockModel(), 1_000_000, RandomSource(5))
    measured = compute_dnl_inl(hist, PERIOD, 600).max_abs_dnl
    # oracle: sort thresholds, adjacent differences are the bin widths
    s = np.clip(np.sort(bank.static_thresholds), 0, PERIOD)
    widths = np.diff(np.concatenate([[0], s, [PERIOD]]))
    ideal = np.r_[0.0, np.ones(600)]
    oracle = np.abs(widths / (5 * PS) - ideal).max()
    assert abs(measured / oracle - 1) < 0.15


@given(st.lists(st.integers(min_value=0, max_value=500), min_size=2, max_size=40))
def test_table_always_monotone(counts):
    counts = np.array(counts)
    if counts.sum() == 0:
        return
    t = table_from_histogram(CodeHistogram(counts, int(counts.sum())), 1_000_000)
    assert (np.diff(t) >= 0).all()
    assert t[0] >= 0 and t[-1] <= 1_000_000
    observed = np.flatnonzero(counts)
    # unobserved codes carry the time of an observed code
    assert set(t.tolist()) <= set(t[observed].tolist())


def test_histogram_merge_associative():
    rng = np.random.default_rng(0)
    hs = [CodeHistogram(c, int(c.sum())) for c in rng.integers(0, 20, (3, 11))]
    a = hs[0].merge(hs[1]).merge(hs[2])
    b = hs[0].merge(hs[1].merge(hs[2]))
    c = hs[2].merge(hs[0]).merge(hs[1])
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.counts, c.counts)


def test_histogram_invariants():
    with pytest.raises(DomainError):
        CodeHistogram(np.array([1, 2]), 4)
    with pytest.raises(DomainError):
        CodeHistogram(np.array([-1, 2]), 1)


def test_table_serialization_roundtrip(ideal_calibration):
    _, table = ideal_calibration
    again = CalibrationTable.from_bytes(table.to_bytes())
    assert again == table
    lines = table.to_csv().splitlines()
    assert lines[0] == "code,time_fs" and len(lines) == 602
    assert lines[301] == f"300,{table.code_to_time[300]}"


def test_table_bytes_checked(ideal_calibration):
    _, table = ideal_calibration
    raw = table.to_bytes()
    with pytest.raises(IntegrityError):
        CalibrationTable.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(IntegrityError):
        CalibrationTable.from_bytes(raw[:-3])


def test_inl_tracks_threshold_offsets():
    bank = build_bank(600, PERIOD, 1500, 0, RandomSource(12))
    hist, _ = code_density_calibrate(ONE, bank, ClockModel(), 2_000_000, RandomSource(6))
    inl = compute_dnl_inl(hist, PERIOD, 600).inl
    s = np.sort(bank.static_thresholds)
    expected = (s - np.arange(600) * 5 * PS) / (5 * PS)
    # Brownian-bridge sampling noise of the cumulative histogram: ~0.3 LSB at mid-range
    assert np.abs(inl[:600] - expected).max() < 1.5


def test_threshold_bins_ideal(ideal_bank):
    lo, hi = threshold_bins(ideal_bank)
    assert hi[0] == lo[0] == 0  # code 0 is a point
    assert (hi[1:] - lo[1:] == 5 * PS).all()
