"""Dataset-to-volume pipeline and interpolation cross-validation.

build_volume interpolates each time slice onto the grid (kriging with a fresh
per-slice variogram, or IDW), fills slices with too few samples by linear
interpolation between their nearest valid neighbors in time, smooths every
cell series with a centered moving average, clamps to the dataset value
range last, and stacks the result into an immutable SpaceTimeVolume.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .interpolate import SliceSamples, idw_slice, krige_slice, slice_samples
from .model import GridSpec, STDataset, SpaceTimeVolume
from .smoothing import smooth_volume
from .variogram import VariogramModel, compute_semivariogram, fit_variogram

MIN_SAMPLES = 3


@dataclass
class CVReport:
    mae: float
    rmse: float
    per_station_errors: List[float]


def fit_slice_model(points: SliceSamples, n_lags: int = 6) -> VariogramModel:
    """Variogram for one slice, with a heuristic fallback for tiny slices.

    When the empirical variogram has fewer than 3 non-empty bins (possible
    for 3-4 point slices) and is not the constant-field case, falls back to
    nugget 0, sill = sample variance, range = half the max pair distance.
    """
    emp = compute_semivariogram(points.xs, points.ys, points.zs, n_lags=n_lags)
    try:
        return fit_variogram(emp)
    except ValueError:
        d = np.hypot(points.xs[:, None] - points.xs[None, :],
                     points.ys[:, None] - points.ys[None, :])
        sill = float(np.var(points.zs))
        return VariogramModel(nugget=0.0, sill=max(sill, 1e-12),
                              range_param=max(float(d.max()) / 2.0, 1e-6))


def _interpolate_slice(points, grid, method, n_lags, idw_power):
    if method == "kriging":
        model = fit_slice_model(points, n_lags=n_lags)
        return krige_slice(points, grid, model)
    if method == "idw":
        return idw_slice(points, grid, power=idw_power)
    raise ValueError(f"unknown interpolation method {method!r}")


def build_volume(dataset: STDataset, grid: GridSpec, method: str = "kriging",
                 window: int = 24, min_samples: int = MIN_SAMPLES,
                 n_lags: int = 6, idw_power: float = 2.0,
                 workers: Optional[int] = None) -> SpaceTimeVolume:
    """Interpolate, fill, smooth, clamp, and stack a dataset into a volume.

    Slices are independent; with ``workers`` they are interpolated on a
    thread pool. Results are written into a preallocated array indexed by
    slice, so the output is bit-identical for any worker count.

    Raises:
        ValueError: no slice has min_samples present readings, or sample
            positions collide (singular kriging system).
    """
    T = dataset.T
    fields = np.zeros((T, grid.n, grid.m), dtype=np.float64)
    valid = np.zeros(T, dtype=bool)
    slices = [slice_samples(dataset, grid, t) for t in range(T)]

    def work(t):
        fields[t] = _interpolate_slice(slices[t], grid, method, n_lags, idw_power)

    todo = [t for t in range(T) if slices[t].count >= min_samples]
    if not todo:
        raise ValueError(
            f"no slice has at least {min_samples} samples; nothing to interpolate")
    valid[todo] = True
    if workers is not None and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, todo))
    else:
        for t in todo:
            work(t)

    _fill_invalid_slices(fields, valid)
    smoothed = smooth_volume(fields, window=window)
    vmin, vmax = dataset.value_range
    np.clip(smoothed, vmin, vmax, out=smoothed)
    return SpaceTimeVolume(grid=grid, T=T, t0=dataset.t0, dt=dataset.dt,
                           data=smoothed.astype(np.float32),
                           value_range=dataset.value_range)


def _fill_invalid_slices(fields, valid):
    """Per-cell linear interpolation in t across invalid slices, in place.

    Boundary runs copy the nearest valid slice.
    """
    T = len(valid)
    valid_ts = np.nonzero(valid)[0]
    if len(valid_ts) == T:
        return
    for t in np.nonzero(~valid)[0]:
        pos = np.searchsorted(valid_ts, t)
        if pos == 0:
            fields[t] = fields[valid_ts[0]]
        elif pos == len(valid_ts):
            fields[t] = fields[valid_ts[-1]]
        else:
            p, q = valid_ts[pos - 1], valid_ts[pos]
            frac = (t - p) / (q - p)
            fields[t] = fields[p] * (1.0 - frac) + fields[q] * frac


def _krige_at_points(points: SliceSamples, model: VariogramModel, tx, ty):
    """Ordinary kriging predictions at arbitrary target positions."""
    from scipy.linalg import lu_factor, lu_solve

    k = points.count
    if k == 1:
        return np.full(len(tx), points.zs[0], dtype=np.float64)
    dx = points.xs[:, None] - points.xs[None, :]
    dy = points.ys[:, None] - points.ys[None, :]
    a = np.empty((k + 1, k + 1), dtype=np.float64)
    a[:k, :k] = model(np.hypot(dx, dy))
    np.fill_diagonal(a[:k, :k], 0.0)
    if np.all(a[:k, :k] == 0.0):
        return np.full(len(tx), points.zs.mean(), dtype=np.float64)
    a[:k, k] = 1.0
    a[k, :k] = 1.0
    a[k, k] = 0.0
    lu, piv = lu_factor(a)
    d = np.hypot(np.asarray(tx)[None, :] - points.xs[:, None],
                 np.asarray(ty)[None, :] - points.ys[:, None])
    rhs = np.empty((k + 1, d.shape[1]), dtype=np.float64)
    rhs[:k] = model(d)
    rhs[:k][d == 0.0] = 0.0
    rhs[k] = 1.0
    return points.zs @ lu_solve((lu, piv), rhs)[:k]


def _idw_at_points(points: SliceSamples, power, tx, ty):
    d = np.hypot(np.asarray(tx)[None, :] - points.xs[:, None],
                 np.asarray(ty)[None, :] - points.ys[:, None])
    exact = d < 1e-9
    d_safe = np.where(exact, 1.0, d)
    w = d_safe ** (-power)
    w[:, exact.any(axis=0)] = 0.0
    denom = w.sum(axis=0)
    denom[denom == 0.0] = 1.0
    out = (points.zs @ w) / denom
    cols = np.nonzero(exact.any(axis=0))[0]
    if cols.size:
        out[cols] = points.zs[np.argmin(d[:, cols], axis=0)]
    return out


def cross_validate(dataset: STDataset, grid: GridSpec, method: str = "kriging",
                   max_slices: int = 16, n_lags: int = 6,
                   idw_power: float = 2.0) -> CVReport:
    """Leave-one-station-out error over a subsample of slices.

    For each evaluated slice, each station with a present reading is held
    out in turn, the remaining samples re-fit (for kriging) and used to
    predict the held-out position.

    Args:
        dataset: input series, S >= 4.
        grid: target grid supplying the coordinate mapping.
        method: "kriging" or "idw".
        max_slices: evaluate at most this many slices, evenly strided.

    Returns:
        CVReport with mae, rmse, and per-station mean absolute error
        (NaN for stations never held out).
    """
    if dataset.S < 4:
        raise ValueError("cross-validation needs at least 4 stations")
    usable = [t for t in range(dataset.T)
              if slice_samples(dataset, grid, t).count >= 4]
    if not usable:
        raise ValueError("no slice has the 4 samples cross-validation needs")
    stride = max(1, len(usable) // max_slices)
    chosen = usable[::stride][:max_slices]

    index_of = {s.id: i for i, s in enumerate(dataset.stations)}
    abs_errs: List[float] = []
    sq_errs: List[float] = []
    per_station: List[List[float]] = [[] for _ in range(dataset.S)]
    for t in chosen:
        pts = slice_samples(dataset, grid, t)
        for hold in range(pts.count):
            keep = np.arange(pts.count) != hold
            rest = SliceSamples(t=t, xs=pts.xs[keep], ys=pts.ys[keep],
                                zs=pts.zs[keep],
                                ids=[pts.ids[i] for i in range(pts.count) if keep[i]])
            tx = np.array([pts.xs[hold]])
            ty = np.array([pts.ys[hold]])
            if method == "kriging":
                model = fit_slice_model(rest, n_lags=n_lags)
                pred = float(_krige_at_points(rest, model, tx, ty)[0])
            elif method == "idw":
                pred = float(_idw_at_points(rest, idw_power, tx, ty)[0])
            else:
                raise ValueError(f"unknown interpolation method {method!r}")
            err = pred - float(pts.zs[hold])
            abs_errs.append(abs(err))
            sq_errs.append(err * err)
            per_station[index_of[pts.ids[hold]]].append(abs(err))

    mae = float(np.mean(abs_errs))
    rmse = float(math.sqrt(np.mean(sq_errs)))
    station_mae = [float(np.mean(e)) if e else float("nan") for e in per_station]
    return CVReport(mae=mae, rmse=rmse, per_station_errors=station_mae)
