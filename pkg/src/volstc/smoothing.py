"""Temporal smoothing: centered moving averages truncated at the boundaries."""
from __future__ import annotations

import numpy as np


def _window_bounds(T: int, window: int):
    w = min(max(1, int(window)), T)
    half_lo = (w - 1) // 2
    half_hi = w // 2
    idx = np.arange(T)
    lo = np.maximum(0, idx - half_lo)
    hi = np.minimum(T - 1, idx + half_hi)
    return lo, hi


def smooth_series(values, window: int = 24):
    """Centered moving average over up to ``window`` consecutive samples.

    Boundaries truncate: the average runs over whichever window samples
    exist. window=1 is the identity; window > T behaves as window = T.
    Returns float64.
    """
    values = np.asarray(values, dtype=np.float64)
    T = len(values)
    if window < 1:
        raise ValueError("window must be >= 1")
    lo, hi = _window_bounds(T, window)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    return (csum[hi + 1] - csum[lo]) / (hi + 1 - lo)


def smooth_volume(data, window: int = 24):
    """smooth_series applied along the time axis of a (T, n, m) stack."""
    data = np.asarray(data, dtype=np.float64)
    T = data.shape[0]
    if window < 1:
        raise ValueError("window must be >= 1")
    lo, hi = _window_bounds(T, window)
    csum = np.concatenate([np.zeros((1,) + data.shape[1:]), np.cumsum(data, axis=0)])
    counts = (hi + 1 - lo).astype(np.float64).reshape(-1, 1, 1)
    return (csum[hi + 1] - csum[lo]) / counts
