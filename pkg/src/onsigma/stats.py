"""Batch-mean accumulators for correlated stationary series."""

from __future__ import annotations

import numpy as np


class BatchMeans:
    """Mean and standard error of a correlated series via batch means.

    Values (scalars or arrays of a fixed shape) are grouped into
    consecutive batches of ``batch_size``; the standard error of the
    overall mean comes from the scatter of the batch means, which washes
    out autocorrelation once batches exceed the decorrelation time.
    A trailing partial batch is excluded from the error bar but included
    in nothing else.
    """

    def __init__(self, batch_size):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.batch_size = int(batch_size)
        self._batches = []
        self._acc = None
        self._in_batch = 0
        self.count = 0

    def add(self, value):
        value = np.asarray(value, dtype=float)
        if self._acc is None:
            self._acc = np.zeros_like(value)
        self._acc = self._acc + value
        self._in_batch += 1
        self.count += 1
        if self._in_batch == self.batch_size:
            self._batches.append(self._acc / self.batch_size)
            self._acc = np.zeros_like(value)
            self._in_batch = 0

    @property
    def n_batches(self):
        return len(self._batches)

    def mean(self):
        if not self._batches:
            if self.count == 0:
                raise ValueError("no samples accumulated")
            return self._acc / self._in_batch
        return np.mean(self._batches, axis=0)

    def stderr(self):
        if len(self._batches) < 2:
            return np.full_like(self.mean(), np.inf)
        b = np.stack(self._batches)
        return np.std(b, axis=0, ddof=1) / np.sqrt(len(self._batches))


def autocorrelation_time(series, max_lag=None):
    """Integrated autocorrelation time with positive-sequence truncation."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 4:
        return 1.0
    x = x - x.mean()
    var = float(np.dot(x, x) / n)
    if var == 0:
        return 1.0
    if max_lag is None:
        max_lag = min(n // 4, 512)
    tau = 1.0
    for lag in range(1, max_lag + 1):
        rho = float(np.dot(x[:-lag], x[lag:]) / ((n - lag) * var))
        if rho <= 0:
            break
        tau += 2.0 * rho
    return tau


def fit_loglog_slope(xs, ys):
    """Least-squares slope and intercept of log(y) against log(x)."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def fit_exp_rate(ts, ys):
    """Decay rate r of y ~ exp(-r t) by least squares on log y."""
    slope, _ = np.polyfit(np.asarray(ts, float), np.log(np.asarray(ys, float)), 1)
    return -float(slope)
