"""Empirical semivariograms and Gaussian variogram model fitting.

The model form is fixed:

    gamma(h) = nugget + sill * (1 - exp(-3 h^2 / range^2)),   gamma(0) = 0

with nugget >= 0, sill > 0, range > 0, distances in continuous cell units.
Fitting minimizes pair-count-weighted squared residuals. The search runs a
deterministic multi-start simplex over log(range); at each candidate range the
optimal (nugget, sill) pair has a closed weighted-least-squares form, which is
solved exactly (with the nugget clamped to zero and re-solved when negative),
so the outer search is one-dimensional and reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

EPS_SILL = 1e-12


@dataclass(frozen=True)
class VariogramModel:
    """Gaussian variogram parameters. constant_field marks the degenerate fit."""

    nugget: float
    sill: float
    range_param: float
    constant_field: bool = False

    def __post_init__(self):
        if self.nugget < 0:
            raise ValueError("nugget must be >= 0")
        if self.sill <= 0:
            raise ValueError("sill must be > 0")
        if self.range_param <= 0:
            raise ValueError("range must be > 0")

    def __call__(self, h):
        """gamma(h); exactly 0 at h=0 (the nugget is a discontinuity at the origin)."""
        h = np.asarray(h, dtype=np.float64)
        g = self.nugget + self.sill * (
            1.0 - np.exp(-3.0 * h * h / (self.range_param * self.range_param)))
        return np.where(h == 0.0, 0.0, g)


def compute_semivariogram(xs, ys, zs, n_lags: int = 6):
    """Empirical semivariogram of scattered samples.

    Pairwise distances are binned into ``n_lags`` equal-width bins over
    (0, max_distance], bin k covering (k*w, (k+1)*w]. Within each bin gamma is
    the mean of (z_i - z_j)^2 / 2; empty bins are omitted.

    Args:
        xs, ys: sample positions in continuous cell coordinates.
        zs: sample values.
        n_lags: bin count, >= 1.

    Returns:
        List of (lag_center, gamma, pair_count), lag_center the bin midpoint.

    Raises:
        ValueError: fewer than two samples.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    zs = np.asarray(zs, dtype=np.float64)
    k = len(xs)
    if k < 2:
        raise ValueError("semivariogram needs at least two samples")
    if n_lags < 1:
        raise ValueError("n_lags must be >= 1")

    dx = xs[:, None] - xs[None, :]
    dy = ys[:, None] - ys[None, :]
    dz = zs[:, None] - zs[None, :]
    iu = np.triu_indices(k, 1)
    d = np.hypot(dx[iu], dy[iu])
    semi = 0.5 * dz[iu] ** 2

    dmax = float(d.max())
    if dmax <= 0.0:
        raise ValueError("all samples coincide; no positive pair distance")
    width = dmax / n_lags
    # (k*w, (k+1)*w]: ceil(d/w) - 1 lands each distance in its half-open bin
    bins = np.ceil(d / width).astype(np.int64) - 1
    bins = np.clip(bins, 0, n_lags - 1)
    out = []
    for b in range(n_lags):
        mask = (bins == b) & (d > 0)
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        center = (b + 0.5) * width
        out.append((center, float(semi[mask].mean()), cnt))
    return out


def _profiled_wls(lags, gammas, weights, range_param):
    """Best (nugget, sill) for a fixed range by weighted linear least squares.

    The model is linear in (nugget, sill) once range is fixed:
    gamma ~ nugget + sill * f(h). A negative nugget solution is clamped to 0
    and the sill re-solved; a non-positive sill falls back to EPS_SILL.
    Returns (nugget, sill, weighted_sse).
    """
    f = 1.0 - np.exp(-3.0 * lags * lags / (range_param * range_param))
    w = weights
    s_w = w.sum()
    s_wf = (w * f).sum()
    s_wff = (w * f * f).sum()
    s_wg = (w * gammas).sum()
    s_wfg = (w * f * gammas).sum()
    det = s_w * s_wff - s_wf * s_wf
    if abs(det) > 1e-300:
        nugget = (s_wff * s_wg - s_wf * s_wfg) / det
        sill = (s_w * s_wfg - s_wf * s_wg) / det
    else:
        nugget, sill = 0.0, 0.0
    if nugget < 0.0:
        nugget = 0.0
        sill = s_wfg / s_wff if s_wff > 0 else 0.0
    if sill <= 0.0:
        sill = EPS_SILL
        nugget = max(0.0, (s_wg - sill * s_wf) / s_w)
    resid = nugget + sill * f - gammas
    return nugget, sill, float((w * resid * resid).sum())


def fit_variogram(empirical) -> VariogramModel:
    """Fit the Gaussian model to empirical (lag, gamma, pair_count) bins.

    Deterministic: a fixed log-spaced grid of candidate ranges is profiled,
    and the best few candidates are refined with Nelder-Mead over log(range).

    Args:
        empirical: sequence of (lag, gamma, pair_count) with >= 3 entries
            (except the degenerate all-zero case, which short-circuits).

    Returns:
        VariogramModel; for all-zero gammas the constant-field fallback
        (nugget 0, sill 1e-12, range = max lag).
    """
    rows = list(empirical)
    lags = np.array([r[0] for r in rows], dtype=np.float64)
    gammas = np.array([r[1] for r in rows], dtype=np.float64)
    counts = np.array([r[2] for r in rows], dtype=np.float64)
    if np.all(gammas <= 0.0):
        return VariogramModel(nugget=0.0, sill=EPS_SILL,
                              range_param=float(lags.max()) if len(lags) else 1.0,
                              constant_field=True)
    if len(rows) < 3:
        raise ValueError("variogram fit needs at least 3 non-empty bins")

    lag_min = float(lags[lags > 0].min())
    lag_max = float(lags.max())
    log_lo = math.log(max(lag_min * 0.25, 1e-6))
    log_hi = math.log(lag_max * 4.0)
    candidates = np.linspace(log_lo, log_hi, 24)

    scored = []
    for lr in candidates:
        n, s, sse = _profiled_wls(lags, gammas, counts, math.exp(lr))
        scored.append((sse, lr, n, s))
    scored.sort(key=lambda t: (t[0], t[1]))

    def objective(x):
        # hard walls: an unbounded range underflows f(h) to exactly 0, which
        # makes every downstream kriging matrix singular
        if x[0] < log_lo or x[0] > log_hi:
            return 1e30 + abs(x[0])
        return _profiled_wls(lags, gammas, counts, math.exp(x[0]))[2]

    best = None
    for sse0, lr0, _, _ in scored[:3]:
        res = minimize(objective, x0=[lr0], method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 400})
        cand = (float(res.fun), float(res.x[0]))
        if best is None or cand < best:
            best = cand
    _, log_range = best
    range_param = math.exp(min(max(log_range, log_lo), log_hi))
    nugget, sill, _ = _profiled_wls(lags, gammas, counts, range_param)
    return VariogramModel(nugget=max(0.0, nugget), sill=max(sill, EPS_SILL),
                          range_param=range_param)
