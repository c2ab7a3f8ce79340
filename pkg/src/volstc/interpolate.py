"""Per-slice spatial interpolation: ordinary kriging and inverse distance weighting.

Sample positions and grid targets live in continuous cell coordinates; cell
(x, y) is predicted at its center (x + 0.5, y + 0.5). The kriging system is
factored once per slice and reused for every cell's right-hand side.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .model import GridSpec, STDataset
from .variogram import VariogramModel

COINCIDENT_DIST = 1e-9


@dataclass
class SliceSamples:
    """Present readings of one time slice, positioned in cell coordinates."""

    t: int
    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray
    ids: Optional[List[str]] = None

    @property
    def count(self) -> int:
        return len(self.xs)


def slice_samples(dataset: STDataset, grid: GridSpec, t: int) -> SliceSamples:
    """Collect the stations with a present reading at step t.

    Stations outside the grid extent are kept; their continuous cell
    coordinates simply fall outside [0, m] x [0, n] and still inform
    boundary cells.
    """
    xs, ys, zs, ids = [], [], [], []
    for st, se in zip(dataset.stations, dataset.series):
        v = se.values[t]
        if np.isnan(v):
            continue
        fx, fy = grid.cell_coords(st.lon, st.lat)
        xs.append(fx)
        ys.append(fy)
        zs.append(float(v))
        ids.append(st.id)
    return SliceSamples(
        t=t,
        xs=np.asarray(xs, dtype=np.float64),
        ys=np.asarray(ys, dtype=np.float64),
        zs=np.asarray(zs, dtype=np.float64),
        ids=ids,
    )


def _cell_centers(grid: GridSpec):
    cx = np.arange(grid.m, dtype=np.float64) + 0.5
    cy = np.arange(grid.n, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(cx, cy)  # shape (n, m)
    return gx.ravel(), gy.ravel()


def find_coincident(points: SliceSamples):
    """Pairs of sample indices closer than COINCIDENT_DIST."""
    dx = points.xs[:, None] - points.xs[None, :]
    dy = points.ys[:, None] - points.ys[None, :]
    d2 = dx * dx + dy * dy
    iu = np.triu_indices(points.count, 1)
    hits = np.nonzero(d2[iu] < COINCIDENT_DIST**2)[0]
    return [(int(iu[0][h]), int(iu[1][h])) for h in hits]


def krige_slice(points: SliceSamples, grid: GridSpec, model: VariogramModel,
                clamp_range=None, return_weights: bool = False):
    """Ordinary kriging of one slice onto the grid's cell centers.

    Solves the bordered semivariance system

        [ Gamma  1 ] [ w  ]   [ gamma_0 ]
        [ 1^T    0 ] [ mu ] = [ 1       ]

    once per slice via an LU factorization, then back-substitutes one
    right-hand side per cell. Weights therefore always sum to 1 and a
    zero-nugget model reproduces sample values at coincident cell centers.

    Args:
        points: slice samples, count >= 1.
        grid: target grid.
        model: fitted variogram.
        clamp_range: optional (lo, hi) clamp applied to the output.
        return_weights: also return the (k, n, m) weight field.

    Returns:
        float64 field shaped (n, m); with return_weights, (field, weights).

    Raises:
        ValueError: no samples, or coincident sample positions (the kriging
            matrix would be singular); the error names the colliding stations.
    """
    k = points.count
    if k < 1:
        raise ValueError("kriging needs at least one sample")
    if k == 1:
        field_ = np.full((grid.n, grid.m), points.zs[0], dtype=np.float64)
        if clamp_range is not None:
            np.clip(field_, clamp_range[0], clamp_range[1], out=field_)
        if return_weights:
            return field_, np.ones((1, grid.n, grid.m), dtype=np.float64)
        return field_

    collisions = find_coincident(points)
    if collisions:
        def name(i):
            return points.ids[i] if points.ids else f"#{i}"
        listing = ", ".join(f"{name(i)} / {name(j)}" for i, j in collisions[:8])
        raise ValueError(
            f"coincident sample positions make the kriging matrix singular: {listing}")

    dx = points.xs[:, None] - points.xs[None, :]
    dy = points.ys[:, None] - points.ys[None, :]
    h = np.hypot(dx, dy)
    a = np.empty((k + 1, k + 1), dtype=np.float64)
    a[:k, :k] = model(h)
    np.fill_diagonal(a[:k, :k], 0.0)  # gamma(0) = 0
    if np.all(a[:k, :k] == 0.0):
        # semivariance underflowed to nothing (degenerate model): the system
        # only constrains sum(w) = 1, and the symmetric solution is the mean
        field_ = np.full((grid.n, grid.m), points.zs.mean(), dtype=np.float64)
        if clamp_range is not None:
            np.clip(field_, clamp_range[0], clamp_range[1], out=field_)
        if return_weights:
            return field_, np.full((k, grid.n, grid.m), 1.0 / k)
        return field_
    a[:k, k] = 1.0
    a[k, :k] = 1.0
    a[k, k] = 0.0
    lu, piv = lu_factor(a)

    gx, gy = _cell_centers(grid)
    d = np.hypot(gx[None, :] - points.xs[:, None],
                 gy[None, :] - points.ys[:, None])  # (k, m*n)
    rhs = np.empty((k + 1, d.shape[1]), dtype=np.float64)
    rhs[:k] = model(d)
    rhs[:k][d == 0.0] = 0.0
    rhs[k] = 1.0
    sol = lu_solve((lu, piv), rhs)
    w = sol[:k]
    field_ = (points.zs @ w).reshape(grid.n, grid.m)
    if clamp_range is not None:
        np.clip(field_, clamp_range[0], clamp_range[1], out=field_)
    if return_weights:
        return field_, w.reshape(k, grid.n, grid.m)
    return field_


def idw_slice(points: SliceSamples, grid: GridSpec, power: float = 2.0,
              clamp_range=None):
    """Inverse-distance-weighted interpolation of one slice.

    z_hat = sum(z_i / d_i^p) / sum(1 / d_i^p); a cell closer than 1e-9 to a
    sample takes that sample's value exactly. Output is clamped into the
    sample value range (and then clamp_range if given).
    """
    if points.count < 1:
        raise ValueError("idw needs at least one sample")
    if power <= 0:
        raise ValueError("idw power must be positive")
    gx, gy = _cell_centers(grid)
    d = np.hypot(gx[None, :] - points.xs[:, None],
                 gy[None, :] - points.ys[:, None])  # (k, m*n)
    exact = d < COINCIDENT_DIST
    d_safe = np.where(exact, 1.0, d)
    wts = d_safe ** (-power)
    wts[:, exact.any(axis=0)] = 0.0  # exact cells resolved below
    denom = wts.sum(axis=0)
    denom[denom == 0.0] = 1.0
    out = (points.zs @ wts) / denom
    hit_cols = np.nonzero(exact.any(axis=0))[0]
    if hit_cols.size:
        nearest = np.argmin(d[:, hit_cols], axis=0)
        out[hit_cols] = points.zs[nearest]
    np.clip(out, points.zs.min(), points.zs.max(), out=out)
    if clamp_range is not None:
        np.clip(out, clamp_range[0], clamp_range[1], out=out)
    return out.reshape(grid.n, grid.m)
