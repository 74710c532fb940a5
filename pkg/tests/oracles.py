"""Independent reference models used by the test suite.

Each function reimplements the behaviour it checks from first principles
(closed forms, Gaussian CDF sums or a standalone Monte Carlo with its own
random stream) and shares no code with the package under test.
"""
import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm


def mean_code(delay, thresholds, sigma):
    """Expected per-trigger code: sum of tap crossing probabilities."""
    return norm.cdf((delay - np.asarray(thresholds, float)) / sigma).sum()


def code_variance(delay, thresholds, sigma):
    """Per-trigger code variance with independent tap jitter."""
    p = norm.cdf((delay - np.asarray(thresholds, float)) / sigma)
    return (p * (1 - p)).sum()


def resolution(base, thresholds, sigma, triggers, k=3.0, max_step=100_000):
    """Width of the interval whose mean code stays within k standard errors of the base."""

    def gap(step):
        e0, v0 = mean_code(base, thresholds, sigma), code_variance(base, thresholds, sigma)
        e1, v1 = mean_code(base + step, thresholds, sigma), code_variance(base + step, thresholds, sigma)
        return abs(e1 - e0) - k * np.sqrt((v0 + v1) / triggers)

    up = brentq(gap, 1e-3, max_step)
    down = brentq(lambda s: gap(-s), 1e-3, max_step)
    return up + down


def quantized_jitter_precision(input_sigma, pitch, triggers):
    """Std of a T-trigger average of a uniform quantizer fed with Gaussian input jitter."""
    return np.sqrt(input_sigma**2 + pitch**2 / 12) / np.sqrt(triggers)


def edge_jitter_added_rms(fraction, period, n_taps, tap_sigma, edge_sigma, triggers, trials, seed):
    """Monte Carlo rms of the decode shift caused by a jittered reference edge.

    Per trial a fresh ideal ladder with Gaussian tap jitter is drawn and the
    averaged code is compared with and without a Gaussian shift of the
    fractional delay; both use the same tap draws.
    """
    rng = np.random.default_rng(seed)
    pitch = period / n_taps
    ladder = np.arange(n_taps) * pitch
    out = np.empty(trials)
    for i in range(trials):
        thr = ladder + rng.normal(0, tap_sigma, (triggers, n_taps))
        shift = np.rint(rng.normal(0, edge_sigma))
        a = np.count_nonzero(fraction > thr, axis=1).mean()
        b = np.count_nonzero(fraction - shift > thr, axis=1).mean()
        out[i] = (b - a) * pitch
    return float(np.sqrt(np.mean(out**2)))
