"""Temporal relevance estimation from feedback documents.

The central object is a weighted Gaussian kernel density over document
timestamps,

    f(t) = (1 / (n h)) * sum_d w_d * K((t - t_d) / h),

with K the standard normal kernel and the weights rescaled to sum to n.
Histogram utilities and a one-dimensional earth mover's distance support
comparing temporal profiles of ranked lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, MismatchedBinningError

SQRT_2PI = math.sqrt(2.0 * math.pi)

# Floor applied before taking logs of density values.
DENSITY_FLOOR = 1e-10

# Default histogram period: one day of epoch seconds.
DEFAULT_PERIOD = 86400.0

# Bandwidth used when the plug-in rule degenerates (single point or zero
# spread): one hour, or a hundredth of the histogram period if that is wider.
MIN_BANDWIDTH = 3600.0


def fallback_bandwidth(period: float = DEFAULT_PERIOD) -> float:
    return max(MIN_BANDWIDTH, period / 100.0)


def silverman_bandwidth(timestamps) -> float:
    """Plug-in bandwidth 1.06 * sigma * n**(-1/5).

    sigma is the sample standard deviation. Raises DegenerateSampleError for
    fewer than two points or zero spread, where the rule is undefined.
    """
    ts = np.asarray(timestamps, dtype=float)
    n = ts.size
    if n < 2:
        raise DegenerateSampleError(f"need at least 2 samples, got {n}")
    sigma = float(np.std(ts, ddof=1))
    if sigma == 0.0:
        raise DegenerateSampleError("zero spread in sample")
    return 1.06 * sigma * n ** (-1.0 / 5.0)


@dataclass(frozen=True)
class TemporalDensity:
    """A fitted weighted Gaussian KDE over timestamps.

    Weights sum to the number of samples, so the density integrates to one.
    """

    timestamps: np.ndarray
    weights: np.ndarray
    bandwidth: float

    @property
    def n(self) -> int:
        return int(self.timestamps.size)

    def evaluate(self, t):
        return kde_eval(self, t)


def kde_fit(
    timestamps,
    weights=None,
    *,
    bandwidth: float | None = None,
    period: float = DEFAULT_PERIOD,
) -> TemporalDensity:
    """Fit the weighted KDE, choosing the bandwidth when not given.

    Weights default to uniform and are rescaled to sum to n. When the
    plug-in rule degenerates the fallback bandwidth for `period` is used.
    """
    ts = np.asarray(timestamps, dtype=float)
    if ts.size == 0:
        raise DegenerateSampleError("cannot fit a density to zero samples")
    if weights is None:
        w = np.ones_like(ts)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != ts.shape:
            raise ValueError("weights and timestamps must have the same length")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        total = float(w.sum())
        if total <= 0.0:
            raise ValueError("weights must not all be zero")
        w = w * (ts.size / total)
    if bandwidth is None:
        try:
            bandwidth = silverman_bandwidth(ts)
        except DegenerateSampleError:
            bandwidth = fallback_bandwidth(period)
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return TemporalDensity(timestamps=ts, weights=w, bandwidth=float(bandwidth))


def kde_eval(density: TemporalDensity, t):
    """Evaluate the density at scalar or array t. Vectorized; never negative."""
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    grid = np.atleast_1d(t_arr)
    h = density.bandwidth
    n = density.n
    z = (grid[None, :] - density.timestamps[:, None]) / h
    kernel = np.exp(-0.5 * z * z) / SQRT_2PI
    values = (density.weights[:, None] * kernel).sum(axis=0) / (n * h)
    if scalar:
        return float(values[0])
    return values


def log_density(density: TemporalDensity, t, floor: float = DENSITY_FLOOR):
    """log of the density with a floor, safe to use as a ranking feature."""
    values = np.maximum(kde_eval(density, t), floor)
    return float(np.log(values)) if np.ndim(t) == 0 else np.log(values)


def feedback_weights(scored, scheme: str) -> np.ndarray:
    """Per-document KDE weights from a retrieved feedback list.

    scheme "score" applies a softmax over the retrieval log-scores; scheme
    "rank" weights each document by 1/rank. Both are rescaled to sum to the
    number of documents.
    """
    entries = scored.entries
    if not entries:
        raise ValueError("cannot weight an empty feedback list")
    n = len(entries)
    if scheme == "score":
        scores = np.array([e.score for e in entries], dtype=float)
        shifted = np.exp(scores - scores.max())
        raw = shifted / shifted.sum()
    elif scheme == "rank":
        raw = 1.0 / np.array([e.rank for e in entries], dtype=float)
    else:
        raise ValueError(f"unknown weighting scheme: {scheme!r}")
    return raw * (n / raw.sum())


@dataclass(frozen=True)
class TimeHistogram:
    """Mass-normalized histogram over uniform time bins.

    Bin i covers [origin + i * period, origin + (i + 1) * period).
    """

    period: float
    origin: float
    masses: np.ndarray

    @property
    def n_bins(self) -> int:
        return int(self.masses.size)


def histogram(
    timestamps,
    weights=None,
    *,
    period: float = DEFAULT_PERIOD,
    origin: float | None = None,
) -> TimeHistogram:
    """Bin weighted timestamps into uniform periods and normalize the mass."""
    if period <= 0:
        raise ValueError(f"period must be positive, got {period}")
    ts = np.asarray(timestamps, dtype=float)
    if ts.size == 0:
        return TimeHistogram(period=period, origin=float(origin or 0.0), masses=np.zeros(0))
    if weights is None:
        w = np.ones_like(ts)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != ts.shape:
            raise ValueError("weights and timestamps must have the same length")
    if origin is None:
        origin = float(ts.min())
    if ts.min() < origin:
        raise ValueError("histogram origin must not exceed the earliest sample")
    total = float(w.sum())
    if total <= 0:
        raise ValueError("histogram mass must be positive")
    idx = np.floor((ts - origin) / period).astype(int)
    masses = np.zeros(int(idx.max()) + 1)
    np.add.at(masses, idx, w)
    return TimeHistogram(period=period, origin=float(origin), masses=masses / total)


def emd_1d(a: TimeHistogram, b: TimeHistogram) -> float:
    """Earth mover's distance between two aligned histograms, in bins.

    Computed as the summed absolute difference of the cumulative mass
    curves. Requires an equal period and origins differing by a whole
    number of bins; callers re-bin otherwise.
    """
    if a.period != b.period:
        raise MismatchedBinningError(
            f"periods differ: {a.period} vs {b.period}"
        )
    shift = (b.origin - a.origin) / a.period
    offset = round(shift)
    if abs(shift - offset) > 1e-9:
        raise MismatchedBinningError(
            f"origins differ by {shift} bins, not a whole number"
        )
    if a.n_bins == 0 or b.n_bins == 0:
        raise MismatchedBinningError("cannot compare an empty histogram")
    # Lay both mass arrays over a shared bin range.
    start = min(0, offset)
    end = max(a.n_bins, offset + b.n_bins)
    mass_a = np.zeros(end - start)
    mass_b = np.zeros(end - start)
    mass_a[-start : -start + a.n_bins] = a.masses
    mass_b[offset - start : offset - start + b.n_bins] = b.masses
    return float(np.abs(np.cumsum(mass_a) - np.cumsum(mass_b)).sum())
