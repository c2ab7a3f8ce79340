"""Ray marching through a space-time volume.

Front-to-back compositing with premultiplied colors: the accumulator updates
C_a += (1 - alpha_a) * C_s and alpha_a += (1 - alpha_a) * alpha_s, both using
the pre-update alpha_a. Samples are taken at the midpoints of uniform step
intervals across the ray-box intersection.

A sample composites only when its voxel time index lies in the selected
range, it falls inside the active spotlight circle, and its value reaches
lambda_v. For isosurface bracketing a selection-clipped sample is tracked as
value 0 (the same thing marching a volume with those voxels zeroed would
see); lambda_v filtering never interrupts the bracket chain.

Empty-space skipping works on an 8^3 brick max grid built from a one-voxel
dilated copy of the volume, so a brick whose max is below lambda_v provably
contains no sample that could composite; jumps stay on the sample lattice and
the skipping never changes the output image. It is disabled in surface mode,
which needs consecutive tracked values.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .model import SelectionState, SpaceTimeVolume, default_z_scale
from .transfer import RenderSettings

BRICK_SIZE = 8

_NO_BRICKS = np.zeros((1, 1, 1), dtype=np.float32)


@dataclass(frozen=True)
class Ray:
    """Origin and direction in render-space coordinates."""

    origin: tuple
    direction: tuple

    def unit(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        norm = np.linalg.norm(d)
        if not norm > 0:
            raise ValueError("ray direction must be non-zero")
        return o, d / norm


@dataclass
class Accumulator:
    """Front-to-back compositing state; color is premultiplied by alpha."""

    color: tuple = (0.0, 0.0, 0.0)
    alpha: float = 0.0


def composite(acc: Accumulator, color_s, alpha_s: float) -> Accumulator:
    """One front-to-back over step; both updates use the pre-update alpha."""
    w = 1.0 - acc.alpha
    r, g, b = acc.color
    cr, cg, cb = color_s
    return Accumulator(
        color=(r + w * cr, g + w * cg, b + w * cb),
        alpha=acc.alpha + w * alpha_s,
    )


def sample_volume(volume: SpaceTimeVolume, p, z_scale: Optional[float] = None):
    """Trilinear sample at a render-space point; None outside the box."""
    if z_scale is None:
        z_scale = default_z_scale(volume.m, volume.n, volume.T)
    px, py, pz = float(p[0]), float(p[1]), float(p[2])
    if not (0.0 <= px <= volume.m and 0.0 <= py <= volume.n
            and 0.0 <= pz <= volume.T * z_scale):
        return None
    return float(_kernels.trilinear(volume.data, z_scale, px, py, pz))


def gradient(volume: SpaceTimeVolume, p, z_scale: Optional[float] = None) -> np.ndarray:
    """Finite-difference gradient at a render-space point, per-voxel units."""
    if z_scale is None:
        z_scale = default_z_scale(volume.m, volume.n, volume.T)
    gx, gy, gt = _kernels.gradient3(volume.data, z_scale,
                                    float(p[0]), float(p[1]), float(p[2]))
    return np.array([gx, gy, gt])


def shade_phong(base_rgb, normal, view_dir, lighting) -> tuple:
    """Phong-shaded color, clamped to [0,1] per channel.

    A zero-length normal shades as ambient only. The normal is flipped
    toward the viewer before lighting.
    """
    l = lighting.unit_light()
    return _kernels.phong(
        float(base_rgb[0]), float(base_rgb[1]), float(base_rgb[2]),
        float(normal[0]), float(normal[1]), float(normal[2]),
        float(view_dir[0]), float(view_dir[1]), float(view_dir[2]),
        lighting.ambient, lighting.diffuse, lighting.specular,
        lighting.shininess, l[0], l[1], l[2])


def brick_grid(volume: SpaceTimeVolume) -> np.ndarray:
    """8^3 brick maxima of the one-voxel-dilated volume, cached per volume.

    Dilation makes the brick max an upper bound for every trilinear stencil
    whose sample point lies inside the brick, including stencils reaching
    one voxel over the brick face.
    """
    cached = getattr(volume, "_brick_grid", None)
    if cached is not None:
        return cached
    data = volume.data
    dil = data.copy()
    for axis in range(3):
        lead = [slice(None)] * 3
        lag = [slice(None)] * 3
        lead[axis] = slice(1, None)
        lag[axis] = slice(None, -1)
        np.maximum(dil[tuple(lead)], data[tuple(lag)], out=dil[tuple(lead)])
        np.maximum(dil[tuple(lag)], data[tuple(lead)], out=dil[tuple(lag)])
    T, n, m = data.shape
    bt = -(-T // BRICK_SIZE)
    bn = -(-n // BRICK_SIZE)
    bm = -(-m // BRICK_SIZE)
    padded = np.full((bt * BRICK_SIZE, bn * BRICK_SIZE, bm * BRICK_SIZE),
                     -np.inf, dtype=np.float32)
    padded[:T, :n, :m] = dil
    grid = padded.reshape(bt, BRICK_SIZE, bn, BRICK_SIZE, bm, BRICK_SIZE)
    grid = np.ascontiguousarray(grid.max(axis=(1, 3, 5)))
    object.__setattr__(volume, "_brick_grid", grid)
    return grid


def _selection_params(selection: Optional[SelectionState], T: int):
    if selection is None:
        return 0, T - 1, False, 0.0, 0.0, 0.0
    t_lo, t_hi = selection.time_range
    if selection.spotlight is not None:
        cx, cy, r = selection.spotlight
        return int(t_lo), int(t_hi), True, float(cx), float(cy), float(r) * float(r)
    return int(t_lo), int(t_hi), False, 0.0, 0.0, 0.0


def _march_args(volume, settings, selection, z_scale):
    """Shared argument pack for the compiled march, minus ray, plane, bricks."""
    tf = settings.tf
    step = settings.resolved_step(z_scale)
    light = settings.lighting.unit_light()
    t_lo, t_hi, spot_on, cx, cy, r2 = _selection_params(selection, volume.T)
    return (
        tf.stops_array(), tf.v_min, tf.v_max,
        tf.opacity_max, tf.opacity_gamma, tf.reference_step,
        settings.lambda_v, settings.surface_enabled,
        settings.resolved_lambda_i(), step,
        settings.lighting.ambient, settings.lighting.diffuse,
        settings.lighting.specular, settings.lighting.shininess,
        light[0], light[1], light[2],
        settings.early_termination_alpha, settings.resolved_g_min(),
        t_lo, t_hi, spot_on, cx, cy, r2,
    ), step


def march_ray(volume: SpaceTimeVolume, ray: Ray, settings: RenderSettings,
              selection: Optional[SelectionState] = None,
              z_scale: Optional[float] = None):
    """March one ray; returns (premultiplied rgb, alpha, first_hit or None).

    first_hit is the render-space position of the first composited sample
    (the refined intersection when an isosurface hit comes first).
    """
    if z_scale is None:
        z_scale = default_z_scale(volume.m, volume.n, volume.T)
    o, d = ray.unit()
    args, _ = _march_args(volume, settings, selection, z_scale)
    use_bricks = settings.empty_space_skipping and not settings.surface_enabled
    r, g, b, a, hit, hx, hy, hz = _kernels.march_one(
        volume.data, z_scale,
        o[0], o[1], o[2], d[0], d[1], d[2],
        *args,
        False, -1.0, 0.0, 0.0, 0.0,
        brick_grid(volume) if use_bricks else _NO_BRICKS,
        use_bricks, BRICK_SIZE)
    first_hit = (hx, hy, hz) if hit else None
    return (r, g, b), a, first_hit
