"""Speckle statistics: histograms, exponential fits, exceedance, correlation.

Fully developed speckle has the negative-exponential intensity density
p(I) = exp(-I/s)/s with scale s = 2 sigma^2 (twice the variance of the
complex field), so the maximum-likelihood scale is the sample mean and
the survival function is P(I > t) = exp(-t/<I>). The tools here fit that
law, quantify departures with a Kolmogorov-Smirnov statistic, and
measure the frame-to-frame temporal correlation of a movie.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .optics import Frame, Movie

__all__ = [
    "IntensityHistogram",
    "SpeckleStats",
    "histogram",
    "fit_exponential",
    "exceedance",
    "temporal_crosscorr",
    "write_histogram_csv",
    "write_exceedance_csv",
    "write_correlation_csv",
]


@dataclass(frozen=True)
class IntensityHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    total: int

    def __post_init__(self):
        if int(self.counts.sum()) != self.total:
            raise DataError("histogram counts do not sum to total")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise DataError("histogram bin edges must be strictly increasing")

    @property
    def mode_bin(self) -> int:
        return int(np.argmax(self.counts))


@dataclass(frozen=True)
class SpeckleStats:
    mean_intensity: float
    contrast: float
    exponential_scale: float
    ks_statistic: float
    mode_bin: int


def _values(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return np.asarray(frame.pixels, dtype=float).ravel()
    return np.asarray(frame, dtype=float).ravel()


def histogram(frame, n_bins: int = 64) -> IntensityHistogram:
    """Histogram of a processed frame over uniform bins in [0, 1]."""
    if n_bins < 2:
        raise ConfigError("n_bins must be >= 2")
    vals = _values(frame)
    if vals.size == 0:
        raise DataError("empty frame")
    if vals.min() < -1e-9 or vals.max() > 1 + 1e-9:
        raise DataError("histogram expects processed values in [0, 1]")
    counts, edges = np.histogram(vals, bins=n_bins, range=(0.0, 1.0))
    return IntensityHistogram(bin_edges=edges, counts=counts, total=int(vals.size))


def fit_exponential(data) -> SpeckleStats:
    """MLE exponential fit with a KS goodness-of-fit statistic.

    Accepts a frame, an array of intensities, or an IntensityHistogram.
    The MLE scale of the exponential law equals the sample mean; the
    contrast is the ratio of standard deviation to mean.
    """
    if isinstance(data, IntensityHistogram):
        centers = 0.5 * (data.bin_edges[:-1] + data.bin_edges[1:])
        weights = data.counts.astype(float)
        total = weights.sum()
        if total == 0:
            raise DataError("empty histogram")
        mean = float(np.sum(centers * weights) / total)
        if mean <= 0:
            raise DataError("exponential fit requires a positive mean")
        var = float(np.sum(weights * (centers - mean) ** 2) / total)
        model_cdf = 1.0 - np.exp(-data.bin_edges[1:] / mean)
        empirical_cdf = np.cumsum(weights) / total
        ks = float(np.max(np.abs(empirical_cdf - model_cdf)))
        mode = data.mode_bin
    else:
        vals = _values(data)
        if vals.size == 0:
            raise DataError("empty frame")
        mean = float(vals.mean())
        if mean <= 0:
            raise DataError("exponential fit requires a positive mean")
        var = float(vals.var())
        x = np.sort(vals)
        model = 1.0 - np.exp(-x / mean)
        n = x.size
        upper = np.arange(1, n + 1) / n - model
        lower = model - np.arange(0, n) / n
        ks = float(max(upper.max(), lower.max()))
        span = max(x[-1], 1.0)
        mode = histogram(np.clip(vals / span, 0.0, 1.0)).mode_bin
    contrast = float(np.sqrt(var) / mean)
    return SpeckleStats(
        mean_intensity=mean,
        contrast=contrast,
        exponential_scale=mean,
        ks_statistic=ks,
        mode_bin=mode,
    )


def exceedance(frame, thresholds) -> np.ndarray:
    """Empirical survival fractions P(I > t) at each threshold."""
    vals = _values(frame)
    if vals.size == 0:
        raise DataError("empty frame")
    t = np.asarray(thresholds, dtype=float)
    return (vals[None, :] > t[:, None]).mean(axis=1)


def temporal_crosscorr(movie, max_lag: int) -> np.ndarray:
    """Pearson correlation between frame 0 and frame k, k = 0..max_lag."""
    frames = movie.pixel_stack() if isinstance(movie, Movie) else np.asarray(movie)
    frames = frames.astype(float)
    if frames.ndim != 3:
        raise DataError("expected a stack of frames (t, h, w)")
    if len(frames) <= max_lag:
        raise DataError("movie length must exceed max_lag")
    ref = frames[0].ravel()
    ref = ref - ref.mean()
    ref_norm = float(np.sqrt(np.sum(ref**2)))
    if ref_norm == 0:
        raise DataError("correlation undefined for a constant frame")
    coeffs = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        cur = frames[lag].ravel()
        cur = cur - cur.mean()
        cur_norm = float(np.sqrt(np.sum(cur**2)))
        if cur_norm == 0:
            raise DataError("correlation undefined for a constant frame")
        coeffs[lag] = float(np.dot(ref, cur) / (ref_norm * cur_norm))
    return coeffs


def write_histogram_csv(path, hist: IntensityHistogram) -> None:
    with open(path, "w") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for lo, hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
            fh.write(f"{lo:.9g},{hi:.9g},{int(c)}\n")


def write_exceedance_csv(path, thresholds, probabilities) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,probability\n")
        for t, p in zip(thresholds, probabilities):
            fh.write(f"{t:.9g},{p:.9g}\n")


def write_correlation_csv(path, coefficients) -> None:
    with open(path, "w") as fh:
        fh.write("lag,coefficient\n")
        for lag, c in enumerate(coefficients):
            fh.write(f"{lag},{c:.9g}\n")
