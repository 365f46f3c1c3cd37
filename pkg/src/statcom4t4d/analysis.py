"""Waveform metrics: harmonic distortion, phasors, settling and spread."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import WindowError
from .record import TimeSeriesRecord

__all__ = [
    "TimeSeriesRecord", "integer_cycles", "cycle_window", "thd", "thd_full_band", "fundamental_phasor",
    "settling_time", "spread", "cycle_spread", "corridor_entry_time", "overshoot", "level_count", "SpreadStats",
]


def _cycles(n: int, fs: float, f0: float, min_cycles: int) -> int:
    c = n * f0 / fs
    k = int(round(c))
    if abs(c - k) > 1e-6 * max(1.0, c):
        raise WindowError(f"window holds {c:.6f} cycles of {f0} Hz; an integer count is required")
    if k < min_cycles:
        raise WindowError(f"window holds {k} cycles, at least {min_cycles} required")
    return k


def integer_cycles(fs: float, f0: float, at_least: int = 10, limit: int = 10000) -> int:
    """Smallest cycle count >= ``at_least`` that spans a whole number of samples."""
    for k in range(max(at_least, 1), limit + 1):
        n = k * fs / f0
        if abs(n - round(n)) <= 1e-6 * n:
            return k
    raise WindowError(f"no integer-sample window of {f0} Hz cycles at {fs} Hz")


def cycle_window(t: np.ndarray, t_end: float, f0: float, n_cycles: int) -> slice:
    """Index slice covering exactly ``n_cycles`` periods that end at ``t_end``."""
    fs = (t.size - 1) / (t[-1] - t[0])
    n = int(round(n_cycles * fs / f0))
    stop = int(np.searchsorted(t, t_end - 1e-12))
    start = stop - n
    if start < 0:
        raise WindowError("not enough samples before t_end")
    return slice(start, stop)


def _spectrum(x, fs, f0, min_cycles):
    x = np.asarray(x, dtype=float)
    k = _cycles(x.size, fs, f0, min_cycles)
    mag = np.abs(np.fft.rfft(x)) * (2.0 / x.size)
    return mag, k


def thd(x, fs: float, f0: float, n_harmonics: int | None = 50, *, min_cycles: int = 10) -> float:
    """sqrt(sum of A_h^2 for h = 2..H) / A_1 over an integer-cycle window.

    ``n_harmonics=None`` keeps every harmonic below the Nyquist frequency.
    """
    n = np.asarray(x).size
    mag, k = _spectrum(x, fs, f0, min_cycles)
    a1 = mag[k]
    if a1 == 0.0:
        raise ValueError("zero fundamental")
    idx = np.arange(2 * k, mag.size, k)
    if n_harmonics is not None:
        idx = idx[: max(n_harmonics - 1, 0)]
    # the Nyquist bin of an even-length window is not doubled
    h = mag[idx].copy()
    if n % 2 == 0 and idx.size and idx[-1] == n // 2:
        h[-1] *= 0.5
    return float(math.sqrt(np.sum(h * h)) / a1)


def thd_full_band(x, x_sq, fs: float, f0: float, *, min_cycles: int = 10) -> float:
    """Distortion including all content above the sampling bandwidth.

    ``x`` holds interval means of a fast signal and ``x_sq`` the interval
    means of its square, so ``mean(x_sq)`` is the true mean-square value.
    Everything except dc and the fundamental counts as distortion.
    """
    x = np.asarray(x, dtype=float)
    mag, k = _spectrum(x, fs, f0, min_cycles)
    p_total = float(np.mean(x_sq))
    dc = float(np.mean(x))
    p1 = 0.5 * mag[k] ** 2
    return math.sqrt(max(p_total - dc * dc - p1, 0.0) / p1)


def fundamental_phasor(x, fs: float, f0: float, *, min_cycles: int = 1) -> tuple[float, float]:
    """(A, phi) such that x ~ A cos(2 pi f0 t + phi), t from the window start."""
    x = np.asarray(x, dtype=float)
    k = _cycles(x.size, fs, f0, min_cycles)
    n = np.arange(x.size)
    c = np.sum(x * np.exp(-2j * math.pi * k * n / x.size)) * (2.0 / x.size)
    return float(abs(c)), float(np.angle(c))


def _trailing_rms(x: np.ndarray, w: int) -> np.ndarray:
    c = np.concatenate(([0.0], np.cumsum(x * x)))
    out = np.empty_like(x)
    idx = np.arange(x.size)
    lo = np.maximum(idx - w + 1, 0)
    out[:] = np.sqrt((c[idx + 1] - c[lo]) / (idx + 1 - lo))
    return out


def settling_time(t, x, t_event: float, target: float, band_fraction: float = 0.05, *,
                  envelope: str = "raw", window: float | None = None,
                  scale: float | None = None) -> float:
    """Time after ``t_event`` from which the signal stays within the band.

    The band is ``band_fraction * |scale|`` (``scale`` defaults to
    ``target``). ``envelope="rms"`` compares a trailing RMS over ``window``
    seconds instead of the raw samples; pass a grid period for the cycle-RMS
    envelope of an oscillating channel. Returns ``inf`` when the signal has
    not settled by the end of the record.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if not t[0] <= t_event <= t[-1]:
        raise ValueError("t_event outside record")
    if envelope == "rms":
        if not window or window <= 0.0:
            raise ValueError("rms envelope needs a positive window")
        fs = (t.size - 1) / (t[-1] - t[0])
        x = _trailing_rms(x, max(int(round(window * fs)), 1))
    elif envelope != "raw":
        raise ValueError(f"unknown envelope {envelope!r}")
    band = band_fraction * abs(target if scale is None else scale)
    i0 = int(np.searchsorted(t, t_event - 1e-12))
    outside = np.abs(x[i0:] - target) > band
    if outside[-1]:
        return math.inf
    bad = np.flatnonzero(outside)
    if bad.size == 0:
        return 0.0
    return float(t[i0 + bad[-1] + 1] - t_event)


@dataclass(frozen=True)
class SpreadStats:
    max_min: float
    mean: float


def spread(v_sm) -> SpreadStats:
    """Extrema across modules and time of a (samples, N) window."""
    v = np.asarray(v_sm, dtype=float)
    return SpreadStats(float(v.max() - v.min()), float(v.mean()))


def cycle_spread(t, v_sm, t0: float, t1: float, f0: float) -> float:
    """Mean of the per-cycle spreads over whole cycles in [t0, t1)."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v_sm, dtype=float)
    period = 1.0 / f0
    n_cyc = int(math.floor((t1 - t0) / period + 1e-9))
    if n_cyc < 1:
        raise WindowError("window shorter than one cycle")
    vals = []
    for c in range(n_cyc):
        a = np.searchsorted(t, t0 + c * period - 1e-12)
        b = np.searchsorted(t, t0 + (c + 1) * period - 1e-12)
        vals.append(spread(v[a:b]).max_min)
    return float(np.mean(vals))


def level_count(levels) -> int:
    """Number of distinct arm-voltage levels (in module-voltage units)."""
    return int(np.unique(np.rint(np.asarray(levels, dtype=float))).size)


def corridor_entry_time(t, v_sm, f0: float, corridor: float) -> float:
    """Start of the first cycle from which the inter-module spread stays in the corridor.

    Each whole grid cycle is tested separately: its spread across modules and
    time must not exceed ``corridor`` plus the peak-to-peak ripple of the
    module-average voltage within that cycle. Time is measured from ``t[0]``;
    ``inf`` means the spread never entered for good.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v_sm, dtype=float)
    period = 1.0 / f0
    n_cyc = int(math.floor((t[-1] - t[0]) / period + 1e-9))
    inside = []
    for c in range(n_cyc):
        a = np.searchsorted(t, t[0] + c * period - 1e-12)
        b = np.searchsorted(t, t[0] + (c + 1) * period - 1e-12)
        seg = v[a:b]
        ripple = float(np.ptp(seg.mean(axis=1)))
        inside.append(spread(seg).max_min <= corridor + ripple)
    if not inside or not inside[-1]:
        return math.inf
    first = len(inside)
    while first > 0 and inside[first - 1]:
        first -= 1
    return first * period


def cycle_means(t, x, f0: float) -> np.ndarray:
    """Average of ``x`` over each whole grid cycle from ``t[0]``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    period = 1.0 / f0
    n_cyc = int(math.floor((t[-1] - t[0]) / period + 1e-9))
    edges = np.searchsorted(t, t[0] + period * np.arange(n_cyc + 1) - 1e-12)
    return np.array([x[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])


def overshoot(t, x, f0: float) -> float:
    """How far the cycle-averaged trajectory passes its final value.

    The direction is set by first versus last cycle mean; the result is in
    the units of ``x`` and never negative.
    """
    m = cycle_means(t, x, f0)
    if m.size < 2:
        return 0.0
    if m[-1] >= m[0]:
        return float(max(m.max() - m[-1], 0.0))
    return float(max(m[-1] - m.min(), 0.0))
