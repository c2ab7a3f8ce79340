"""High-value voxel cluster detection, summaries, and screen-space picking.

Voxels whose value exceeds lambda_a are clustered with DBSCAN over their
integer (x, y, t) indices, treating the three axes isotropically. Neighbor
queries run against a uniform spatial hash whose cell edge is max(eps, 1),
so the 27 surrounding cells always cover the eps ball.

DBSCAN's only nondeterminism is which cluster claims a border point shared
by several; we resolve it by a preliminary rank computed over core members
alone (t_min, core count descending, min x, min y), then canonicalize final
ids with the same key over full membership. The quadratic reference
implementation in the test suite applies the identical rule.
"""
from __future__ import annotations

import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit, prange

from . import _kernels
from .frame import pixel_ray
from .model import Camera, SelectionState, SpaceTimeVolume, default_z_scale

DEFAULT_EPS = 10.0
DEFAULT_MIN_PTS = 100
# detection threshold sits a bit above the display threshold by default
DEFAULT_LAMBDA_A_OFFSET = 25.0
# cells of slack added around a picked cluster's circle
PICK_SPOTLIGHT_PADDING = 2.0

_WELZL_SEED = 0x5EED
_WELZL_CAP = 200_000


@dataclass
class VoxelCluster:
    """One detected cluster: member voxel indices and their values."""

    id: int
    members: np.ndarray  # (N, 3) int32 columns x, y, t
    values: np.ndarray  # (N,) float32

    def member_set(self) -> set:
        return {tuple(row) for row in self.members.tolist()}


@dataclass(frozen=True)
class VoxelClusterSummary:
    id: int
    member_count: int
    t_min: int
    t_max: int
    circle: tuple  # (cx, cy, r) cell coordinates
    value_max: float
    centroid: tuple  # (x, y, t) unweighted mean

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "member_count": self.member_count,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "circle": list(self.circle),
            "value_max": self.value_max,
            "centroid": list(self.centroid),
        }


@njit(cache=True, parallel=True)
def _core_flags(xs, ys, ts, cxa, cya, cza, order, starts,
                ncx, ncy, ncz, eps2, min_pts):
    N = xs.shape[0]
    core = np.zeros(N, dtype=np.bool_)
    for idx in prange(N):
        x = xs[idx]
        y = ys[idx]
        t = ts[idx]
        cnt = 0
        for dz in range(-1, 2):
            zc = cza[idx] + dz
            if zc < 0 or zc >= ncz:
                continue
            for dy in range(-1, 2):
                yc = cya[idx] + dy
                if yc < 0 or yc >= ncy:
                    continue
                for dx in range(-1, 2):
                    xc = cxa[idx] + dx
                    if xc < 0 or xc >= ncx:
                        continue
                    cell = (zc * ncy + yc) * ncx + xc
                    for k in range(starts[cell], starts[cell + 1]):
                        j = order[k]
                        ddx = xs[j] - x
                        ddy = ys[j] - y
                        ddt = ts[j] - t
                        if ddx * ddx + ddy * ddy + ddt * ddt <= eps2:
                            cnt += 1
        core[idx] = cnt >= min_pts
    return core


@njit(cache=True)
def _label_cores(xs, ys, ts, cxa, cya, cza, order, starts,
                 ncx, ncy, ncz, eps2, core):
    """Connected components of core points under the eps relation (BFS)."""
    N = xs.shape[0]
    labels = np.full(N, -1, dtype=np.int64)
    stack = np.empty(N, dtype=np.int64)
    n_lab = 0
    for seed in range(N):
        if not core[seed] or labels[seed] != -1:
            continue
        labels[seed] = n_lab
        stack[0] = seed
        top = 1
        while top > 0:
            top -= 1
            i = stack[top]
            x = xs[i]
            y = ys[i]
            t = ts[i]
            for dz in range(-1, 2):
                zc = cza[i] + dz
                if zc < 0 or zc >= ncz:
                    continue
                for dy in range(-1, 2):
                    yc = cya[i] + dy
                    if yc < 0 or yc >= ncy:
                        continue
                    for dx in range(-1, 2):
                        xc = cxa[i] + dx
                        if xc < 0 or xc >= ncx:
                            continue
                        cell = (zc * ncy + yc) * ncx + xc
                        for k in range(starts[cell], starts[cell + 1]):
                            j = order[k]
                            if not core[j] or labels[j] != -1:
                                continue
                            ddx = xs[j] - x
                            ddy = ys[j] - y
                            ddt = ts[j] - t
                            if ddx * ddx + ddy * ddy + ddt * ddt <= eps2:
                                labels[j] = n_lab
                                stack[top] = j
                                top += 1
        n_lab += 1
    return labels, n_lab


@njit(cache=True, parallel=True)
def _assign_borders(xs, ys, ts, cxa, cya, cza, order, starts,
                    ncx, ncy, ncz, eps2, core, core_labels, prelim_rank):
    """Attach each non-core point to its lowest-ranked core neighbor cluster."""
    N = xs.shape[0]
    out = np.full(N, -1, dtype=np.int64)
    for idx in prange(N):
        if core[idx]:
            out[idx] = core_labels[idx]
            continue
        x = xs[idx]
        y = ys[idx]
        t = ts[idx]
        best_rank = np.int64(2 ** 62)
        best = np.int64(-1)
        for dz in range(-1, 2):
            zc = cza[idx] + dz
            if zc < 0 or zc >= ncz:
                continue
            for dy in range(-1, 2):
                yc = cya[idx] + dy
                if yc < 0 or yc >= ncy:
                    continue
                for dx in range(-1, 2):
                    xc = cxa[idx] + dx
                    if xc < 0 or xc >= ncx:
                        continue
                    cell = (zc * ncy + yc) * ncx + xc
                    for k in range(starts[cell], starts[cell + 1]):
                        j = order[k]
                        if not core[j]:
                            continue
                        ddx = xs[j] - x
                        ddy = ys[j] - y
                        ddt = ts[j] - t
                        if ddx * ddx + ddy * ddy + ddt * ddt <= eps2:
                            r = prelim_rank[core_labels[j]]
                            if r < best_rank:
                                best_rank = r
                                best = core_labels[j]
        out[idx] = best
    return out


def _group_key(xs, ys, ts, labels, lab, mask=None):
    sel = labels == lab
    if mask is not None:
        sel &= mask
    return (
        int(ts[sel].min()),
        -int(sel.sum()),
        int(xs[sel].min()),
        int(ys[sel].min()),
    )


def detect_clusters(volume: SpaceTimeVolume, lambda_a: float,
                    eps: float = DEFAULT_EPS,
                    min_pts: int = DEFAULT_MIN_PTS) -> list:
    """DBSCAN over voxels with value > lambda_a; noise voxels join nothing.

    Cluster ids are canonical: sorted by (t_min, member count descending,
    min x, min y) over full membership, and the returned list is ordered by
    id. Deterministic for a given input.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    tt, yy, xx = np.nonzero(volume.data > lambda_a)
    if len(tt) == 0:
        return []
    xs = xx.astype(np.int64)
    ys = yy.astype(np.int64)
    ts = tt.astype(np.int64)

    cell = max(float(eps), 1.0)
    cxa = (xs / cell).astype(np.int64)
    cya = (ys / cell).astype(np.int64)
    cza = (ts / cell).astype(np.int64)
    ncx = int(cxa.max()) + 1
    ncy = int(cya.max()) + 1
    ncz = int(cza.max()) + 1
    cell_id = (cza * ncy + cya) * ncx + cxa
    order = np.argsort(cell_id, kind="stable")
    counts = np.bincount(cell_id, minlength=ncx * ncy * ncz)
    starts = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])

    eps2 = float(eps) * float(eps)
    core = _core_flags(xs, ys, ts, cxa, cya, cza, order, starts,
                       ncx, ncy, ncz, eps2, min_pts)
    if not core.any():
        return []
    core_labels, n_lab = _label_cores(xs, ys, ts, cxa, cya, cza, order, starts,
                                      ncx, ncy, ncz, eps2, core)

    prelim_order = sorted(range(n_lab),
                          key=lambda c: _group_key(xs, ys, ts, core_labels, c,
                                                   mask=core))
    prelim_rank = np.empty(n_lab, dtype=np.int64)
    for r, c in enumerate(prelim_order):
        prelim_rank[c] = r

    labels = _assign_borders(xs, ys, ts, cxa, cya, cza, order, starts,
                             ncx, ncy, ncz, eps2, core, core_labels,
                             prelim_rank)

    final_order = sorted(range(n_lab),
                         key=lambda c: _group_key(xs, ys, ts, labels, c))
    clusters = []
    values_flat = volume.data[tt, yy, xx]
    for new_id, c in enumerate(final_order):
        sel = labels == c
        members = np.column_stack([xs[sel], ys[sel], ts[sel]]).astype(np.int32)
        member_order = np.lexsort((members[:, 0], members[:, 1], members[:, 2]))
        clusters.append(VoxelCluster(
            id=new_id,
            members=members[member_order],
            values=values_flat[sel][member_order].astype(np.float32),
        ))
    return clusters


# --- minimal enclosing circle -------------------------------------------------

def _contains(cx, cy, r, px, py):
    dx = px - cx
    dy = py - cy
    return dx * dx + dy * dy <= r * r * (1.0 + 1e-12) + 1e-30


def _circle_two(a, b):
    cx = (a[0] + b[0]) / 2.0
    cy = (a[1] + b[1]) / 2.0
    r = float(np.hypot(a[0] - b[0], a[1] - b[1])) / 2.0
    return cx, cy, r


def _circle_three(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-14:
        # collinear: the farthest pair's diameter circle covers all three
        best = None
        for p, q in ((a, b), (a, c), (b, c)):
            cand = _circle_two(p, q)
            if best is None or cand[2] > best[2]:
                best = cand
        return best
    ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay)
          + (cx * cx + cy * cy) * (ay - by)) / d
    uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx)
          + (cx * cx + cy * cy) * (bx - ax)) / d
    r = float(np.hypot(ax - ux, ay - uy))
    return ux, uy, r


def min_enclosing_circle(points, cap: int = _WELZL_CAP) -> tuple:
    """Smallest circle containing all points, randomized incremental.

    Deterministic: the required random order comes from a fixed seed. Above
    `cap` points the exact algorithm gives way to a bounding-box circle
    (never smaller than minimal).
    """
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    n = len(pts)
    if n == 0:
        raise ValueError("need at least one point")
    if n == 1:
        return float(pts[0, 0]), float(pts[0, 1]), 0.0
    if n > cap:
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        cx, cy = (lo + hi) / 2.0
        r = float(np.hypot(pts[:, 0] - cx, pts[:, 1] - cy).max())
        return float(cx), float(cy), r

    rng = np.random.default_rng(_WELZL_SEED)
    pts = pts[rng.permutation(n)]

    cx, cy, r = float(pts[0, 0]), float(pts[0, 1]), 0.0
    for i in range(1, n):
        if _contains(cx, cy, r, pts[i, 0], pts[i, 1]):
            continue
        cx, cy, r = float(pts[i, 0]), float(pts[i, 1]), 0.0
        for j in range(i):
            if _contains(cx, cy, r, pts[j, 0], pts[j, 1]):
                continue
            cx, cy, r = _circle_two(pts[i], pts[j])
            for k in range(j):
                if _contains(cx, cy, r, pts[k, 0], pts[k, 1]):
                    continue
                cx, cy, r = _circle_three(pts[i], pts[j], pts[k])
    return cx, cy, r


def summarize_cluster(cluster: VoxelCluster) -> VoxelClusterSummary:
    """Time range, minimal enclosing circle of the x-y projection, centroid."""
    members = cluster.members
    if len(members) == 0:
        raise ValueError("cluster has no members")
    cx, cy, r = min_enclosing_circle(members[:, :2].astype(np.float64))
    centroid = members.astype(np.float64).mean(axis=0)
    vmax = float(cluster.values.max()) if len(cluster.values) else float("nan")
    return VoxelClusterSummary(
        id=cluster.id,
        member_count=int(len(members)),
        t_min=int(members[:, 2].min()),
        t_max=int(members[:, 2].max()),
        circle=(float(cx), float(cy), float(r)),
        value_max=vmax,
        centroid=(float(centroid[0]), float(centroid[1]), float(centroid[2])),
    )


def label_grid(volume: SpaceTimeVolume, clusters: list) -> np.ndarray:
    """(T, n, m) int32 cluster-id grid, -1 where no cluster owns the voxel."""
    grid = np.full(volume.data.shape, -1, dtype=np.int32)
    for cluster in clusters:
        xs = cluster.members[:, 0].astype(np.int64)
        ys = cluster.members[:, 1].astype(np.int64)
        ts = cluster.members[:, 2].astype(np.int64)
        grid[ts, ys, xs] = cluster.id
    return grid


def pick(volume: SpaceTimeVolume, clusters: list, camera: Camera, pixel,
         lambda_a: float, selection: Optional[SelectionState] = None,
         z_scale: Optional[float] = None,
         step: Optional[float] = None) -> Optional[VoxelClusterSummary]:
    """Resolve a pixel to the first cluster its view ray passes through.

    The ray honors the active selection clipping; a sample resolves when its
    containing voxel has value > lambda_a and carries a cluster label.
    """
    if z_scale is None:
        z_scale = default_z_scale(volume.m, volume.n, volume.T)
    if step is None:
        step = min(1.0, z_scale) / 2.0
    ray = pixel_ray(camera, float(pixel[0]), float(pixel[1]))
    o, d = ray.unit()
    m, n, T = volume.m, volume.n, volume.T
    t_enter, t_exit = _kernels.ray_box(o[0], o[1], o[2], d[0], d[1], d[2],
                                       float(m), float(n), T * z_scale)
    t_enter = max(t_enter, 0.0)
    if t_exit <= t_enter or not clusters:
        return None

    n_samp = int((t_exit - t_enter) / step + 1e-7)
    if n_samp == 0:
        return None
    s = t_enter + (np.arange(n_samp) + 0.5) * step
    P = o[None, :] + s[:, None] * d[None, :]
    ix = np.clip(np.floor(P[:, 0]).astype(np.int64), 0, m - 1)
    iy = np.clip(np.floor(P[:, 1]).astype(np.int64), 0, n - 1)
    it = np.clip(np.floor(P[:, 2] / z_scale).astype(np.int64), 0, T - 1)

    if selection is not None:
        t_lo, t_hi = selection.time_range
        ok = (it >= int(t_lo)) & (it <= int(t_hi))
        if selection.spotlight is not None:
            scx, scy, sr = selection.spotlight
            ok &= ((P[:, 0] - scx) ** 2 + (P[:, 1] - scy) ** 2) <= sr * sr
    else:
        ok = np.ones(n_samp, dtype=bool)

    grid = label_grid(volume, clusters)
    vals = volume.data[it, iy, ix]
    labs = grid[it, iy, ix]
    ok &= (vals > lambda_a) & (labs >= 0)
    if not ok.any():
        return None
    hit = int(np.argmax(ok))
    return summarize_cluster(clusters[int(labs[hit])])


class ClusterCache:
    """One shared detection job per (volume id, lambda_a, eps, min_pts) key.

    Callers get a Future; concurrent requests for the same key await the
    same computation. Results are retained for the cache's lifetime.
    """

    def __init__(self, max_workers: int = 1):
        self._lock = threading.Lock()
        self._futures: dict = {}
        self._executor = ThreadPoolExecutor(max_workers=max_workers,
                                            thread_name_prefix="clusters")

    def get(self, volume: SpaceTimeVolume, volume_id: str, lambda_a: float,
            eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS) -> Future:
        key = (volume_id, float(lambda_a), float(eps), int(min_pts))
        with self._lock:
            fut = self._futures.get(key)
            if fut is None:
                fut = self._executor.submit(detect_clusters, volume,
                                            float(lambda_a), float(eps),
                                            int(min_pts))
                self._futures[key] = fut
        return fut

    def shutdown(self):
        self._executor.shutdown(wait=False)
