import math

import numpy as np
import pytest

from volstc.model import GridSpec, SelectionState, SpaceTimeVolume
from volstc.raymarch import (Accumulator, Ray, composite, gradient, march_ray,
                             sample_volume, shade_phong)
from volstc.transfer import Lighting, RenderSettings, TransferFunction

from oracles import over_fold, ray_sphere_depth


def make_volume(data, value_range=None):
    data = np.ascontiguousarray(data, dtype=np.float32)
    T, n, m = data.shape
    if value_range is None:
        value_range = (float(data.min()), float(data.max()) + 1.0)
    grid = GridSpec(extent=(0.0, 0.0, 10.0, 10.0), m=m, n=n)
    return SpaceTimeVolume(grid=grid, T=T, t0=0, dt=3600, data=data,
                           value_range=value_range)


def distance_volume(size, center, z_scale=1.0):
    """Voxel value = render-space distance from the voxel center to `center`."""
    idx = np.arange(size) + 0.5
    X = idx[None, None, :] - center[0]
    Y = idx[None, :, None] - center[1]
    Z = idx[:, None, None] * z_scale - center[2]
    return np.sqrt(X * X + Y * Y + Z * Z).astype(np.float32)


# --- sampling ---------------------------------------------------------------

def test_sample_at_voxel_center_exact():
    rng = np.random.default_rng(7)
    data = rng.uniform(0.0, 50.0, size=(4, 5, 6)).astype(np.float32)
    vol = make_volume(data)
    zs = 6 / 4  # max(m, n) / T
    for x, y, t in [(0, 0, 0), (5, 4, 3), (2, 3, 1), (4, 0, 2)]:
        p = (x + 0.5, y + 0.5, (t + 0.5) * zs)
        assert sample_volume(vol, p) == pytest.approx(float(data[t, y, x]), abs=1e-6)


def test_sample_midpoint_between_voxels():
    data = np.zeros((2, 2, 3), dtype=np.float32)
    data[0, 0, 1] = 10.0
    vol = make_volume(data, value_range=(0.0, 10.0))
    zs = 3 / 2
    # halfway between the centers of voxels (0,0,0) and (1,0,0)
    assert sample_volume(vol, (1.0, 0.5, 0.5 * zs)) == pytest.approx(5.0)


def test_sample_reproduces_affine_field():
    m, n, T = 6, 5, 4
    zs = max(m, n) / T
    x = np.arange(m)
    y = np.arange(n)
    t = np.arange(T)
    data = (x[None, None, :] + 2.0 * y[None, :, None] + 3.0 * t[:, None, None])
    vol = make_volume(data.astype(np.float32))
    rng = np.random.default_rng(3)
    for _ in range(50):
        px = rng.uniform(0.5, m - 0.5)
        py = rng.uniform(0.5, n - 0.5)
        pz = rng.uniform(0.5 * zs, (T - 0.5) * zs)
        want = (px - 0.5) + 2.0 * (py - 0.5) + 3.0 * (pz / zs - 0.5)
        assert sample_volume(vol, (px, py, pz)) == pytest.approx(want, abs=1e-4)


def test_sample_outside_box_is_none():
    vol = make_volume(np.zeros((2, 2, 2), dtype=np.float32), (0.0, 1.0))
    assert sample_volume(vol, (-0.1, 1.0, 1.0)) is None
    assert sample_volume(vol, (1.0, 1.0, 2.1)) is None
    assert sample_volume(vol, (1.0, 1.0, 1.0)) is not None


# --- gradient ---------------------------------------------------------------

def test_gradient_constant_volume_zero():
    vol = make_volume(np.full((4, 4, 4), 3.5, dtype=np.float32), (0.0, 10.0))
    g = gradient(vol, (2.0, 2.0, 2.0))
    assert np.allclose(g, 0.0)


def test_gradient_affine_field():
    m = n = T = 8
    x = np.arange(m)
    y = np.arange(n)
    t = np.arange(T)
    data = (x[None, None, :] + 2.0 * y[None, :, None] + 3.0 * t[:, None, None])
    vol = make_volume(data.astype(np.float32))
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = rng.uniform(2.0, 6.0, size=3)
        g = gradient(vol, p)
        assert np.allclose(g, (1.0, 2.0, 3.0), atol=1e-4)


def test_gradient_affine_field_scaled_z():
    # per-voxel units must be independent of the render z scale
    m, n, T = 8, 8, 4
    zs = max(m, n) / T  # 2.0
    x = np.arange(m)
    y = np.arange(n)
    t = np.arange(T)
    data = (x[None, None, :] + 2.0 * y[None, :, None] + 3.0 * t[:, None, None])
    vol = make_volume(data.astype(np.float32))
    g = gradient(vol, (4.0, 4.0, 2.0 * zs))
    assert np.allclose(g, (1.0, 2.0, 3.0), atol=1e-4)


def test_gradient_spherical_field_direction():
    c = (24.5, 24.5, 24.5)
    vol = make_volume(distance_volume(48, c))
    offsets = [(17, 0, 0), (0, 18, 0), (0, 0, 17), (12, 12, 5),
               (-10, -10, -10), (16, -6, 3), (-9, 12, -9)]
    for off in offsets:
        p = (c[0] + off[0], c[1] + off[1], c[2] + off[2])
        g = gradient(vol, p)
        want = np.asarray(off, dtype=np.float64)
        cosang = float(np.dot(g, want) / (np.linalg.norm(g) * np.linalg.norm(want)))
        angle = math.acos(min(1.0, max(-1.0, cosang)))
        assert angle <= 1e-3


# --- shading ----------------------------------------------------------------

def test_phong_ambient_only():
    light = Lighting(ambient=0.2, diffuse=0.0, specular=0.0)
    got = shade_phong((0.5, 1.0, 0.25), (0.3, 0.3, 0.9), (0.0, 0.0, 1.0), light)
    assert got == pytest.approx((0.1, 0.2, 0.05))


def test_phong_diffuse_facing_light():
    light = Lighting(ambient=0.0, diffuse=1.0, specular=0.0,
                     light_direction=(0.0, 0.0, 1.0))
    got = shade_phong((0.3, 0.6, 0.9), (0.0, 0.0, 1.0), (0.0, 0.0, 1.0), light)
    assert got == pytest.approx((0.3, 0.6, 0.9))


def test_phong_normal_perpendicular_to_light():
    light = Lighting(ambient=0.2, diffuse=0.8, specular=0.0,
                     light_direction=(0.0, 0.0, 1.0))
    got = shade_phong((1.0, 0.5, 0.0), (1.0, 0.0, 0.0), (1.0, 0.0, 0.0), light)
    assert got == pytest.approx((0.2, 0.1, 0.0))


def test_phong_zero_normal_ambient_fallback():
    light = Lighting(ambient=0.4, diffuse=0.6, specular=0.3)
    got = shade_phong((1.0, 1.0, 0.5), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), light)
    assert got == pytest.approx((0.4, 0.4, 0.2))


def test_phong_normal_flipped_toward_viewer():
    light = Lighting(ambient=0.1, diffuse=0.9, specular=0.0,
                     light_direction=(0.0, 0.0, 1.0))
    a = shade_phong((1.0, 1.0, 1.0), (0.0, 0.0, 1.0), (0.0, 0.0, 1.0), light)
    b = shade_phong((1.0, 1.0, 1.0), (0.0, 0.0, -1.0), (0.0, 0.0, 1.0), light)
    assert a == pytest.approx(b)


def test_phong_clamps_to_unit():
    light = Lighting(ambient=1.0, diffuse=1.0, specular=1.0, shininess=1.0,
                     light_direction=(0.0, 0.0, 1.0))
    got = shade_phong((1.0, 1.0, 1.0), (0.0, 0.0, 1.0), (0.0, 0.0, 1.0), light)
    assert got == (1.0, 1.0, 1.0)


# --- compositing ------------------------------------------------------------

def test_composite_saturated_accumulator_is_fixed():
    acc = Accumulator(color=(0.2, 0.3, 0.4), alpha=1.0)
    out = composite(acc, (0.9, 0.9, 0.9), 0.8)
    assert out.color == pytest.approx(acc.color)
    assert out.alpha == 1.0


def test_composite_onto_empty():
    out = composite(Accumulator(), (0.3, 0.1, 0.2), 1.0)
    assert out.color == pytest.approx((0.3, 0.1, 0.2))
    assert out.alpha == 1.0


def test_composite_frozen_example():
    acc = Accumulator(color=(0.5, 0.0, 0.0), alpha=0.5)
    out = composite(acc, (0.0, 0.25, 0.0), 0.5)
    assert out.alpha == pytest.approx(0.75)
    assert out.color == pytest.approx((0.5, 0.125, 0.0))


def test_composite_fold_matches_series_expansion():
    rng = np.random.default_rng(42)
    alphas = rng.uniform(0.0, 1.0, size=64)
    colors = rng.uniform(0.0, 1.0, size=(64, 3)) * alphas[:, None]
    acc = Accumulator()
    prev_alpha = 0.0
    for rgb, a in zip(colors, alphas):
        acc = composite(acc, tuple(rgb), float(a))
        assert acc.alpha >= prev_alpha - 1e-12
        assert max(acc.color) <= acc.alpha + 1e-6
        prev_alpha = acc.alpha
    want_c, want_a = over_fold(colors, alphas)
    assert acc.color == pytest.approx(tuple(want_c), abs=1e-6)
    assert acc.alpha == pytest.approx(want_a, abs=1e-6)


# --- marching ---------------------------------------------------------------

def homogeneous_setup(step):
    data = np.ones((4, 4, 4), dtype=np.float32)
    vol = make_volume(data, value_range=(0.0, 1.0))
    tf = TransferFunction(v_min=0.0, v_max=1.0, opacity_max=0.1,
                          opacity_gamma=2.0, reference_step=0.4)
    settings = RenderSettings(tf=tf, lambda_v=0.5, step=step)
    ray = Ray(origin=(2.0, 2.0, -1.0), direction=(0.0, 0.0, 1.0))
    return vol, settings, ray


def test_march_homogeneous_ten_samples():
    vol, settings, ray = homogeneous_setup(step=0.4)
    rgb, alpha, hit = march_ray(vol, ray, settings)
    assert alpha == pytest.approx(1.0 - 0.9 ** 10, abs=1e-9)
    assert hit is not None
    # first composited sample sits at the first step midpoint past entry
    assert hit[2] == pytest.approx(0.2, abs=1e-9)
    # unshaded red at u=1, premultiplied: red channel equals alpha
    assert rgb[0] == pytest.approx(alpha, abs=1e-9)
    assert rgb[1] == pytest.approx(0.0, abs=1e-12)


def test_march_step_halving_keeps_alpha():
    _, _, ray = homogeneous_setup(0.4)
    vol, s1, _ = homogeneous_setup(step=0.4)
    _, s2, _ = homogeneous_setup(step=0.2)
    _, a1, _ = march_ray(vol, ray, s1)
    _, a2, _ = march_ray(vol, ray, s2)
    assert abs(a1 - a2) < 1e-3


def test_march_all_below_threshold():
    data = np.full((4, 4, 4), 0.2, dtype=np.float32)
    vol = make_volume(data, value_range=(0.0, 1.0))
    settings = RenderSettings(tf=TransferFunction(0.0, 1.0), lambda_v=0.5, step=0.4)
    rgb, alpha, hit = march_ray(vol, Ray((2.0, 2.0, -1.0), (0.0, 0.0, 1.0)), settings)
    assert alpha == 0.0
    assert rgb == (0.0, 0.0, 0.0)
    assert hit is None


def test_march_missed_box():
    vol = make_volume(np.ones((4, 4, 4), dtype=np.float32), (0.0, 1.0))
    settings = RenderSettings(tf=TransferFunction(0.0, 1.0), lambda_v=0.0, step=0.4)
    rgb, alpha, hit = march_ray(vol, Ray((2.0, 2.0, -1.0), (0.0, 0.0, -1.0)), settings)
    assert alpha == 0.0
    assert hit is None


def test_march_surface_hits_sphere_within_step():
    c = (16.0, 16.0, 16.0)
    R = 8.0
    vol = make_volume(distance_volume(32, c), value_range=(0.0, 56.0))
    tf = TransferFunction(v_min=0.0, v_max=56.0)
    step = 0.25
    settings = RenderSettings(tf=tf, lambda_v=1e9, surface_enabled=True,
                              lambda_i=R, step=step)
    origin = np.array([16.0, 16.0, -20.0])
    checked = 0
    for dx in np.linspace(-5.0, 5.0, 7):
        for dy in np.linspace(-5.0, 5.0, 7):
            target = np.array([16.0 + dx, 16.0 + dy, 16.0])
            d = target - origin
            d = d / np.linalg.norm(d)
            want = ray_sphere_depth(origin, d, c, R)
            assert want is not None
            rgb, alpha, hit = march_ray(vol, Ray(tuple(origin), tuple(d)), settings)
            assert hit is not None
            assert alpha == pytest.approx(1.0)
            got = float(np.linalg.norm(np.asarray(hit) - origin))
            assert abs(got - want) <= step + 1e-6
            checked += 1
    assert checked == 49


def test_march_surface_brackets_both_directions():
    # leaving the sphere interior crosses lambda_i from below as values grow
    c = (16.0, 16.0, 16.0)
    vol = make_volume(distance_volume(32, c), value_range=(0.0, 56.0))
    settings = RenderSettings(tf=TransferFunction(0.0, 56.0), lambda_v=1e9,
                              surface_enabled=True, lambda_i=8.0, step=0.25)
    rgb, alpha, hit = march_ray(vol, Ray((16.0, 16.0, 16.0), (0.0, 0.0, 1.0)), settings)
    assert hit is not None
    assert hit[2] == pytest.approx(24.0, abs=0.3)


def test_march_early_termination_bound():
    rng = np.random.default_rng(5)
    data = rng.uniform(0.5, 1.0, size=(16, 16, 16)).astype(np.float32)
    vol = make_volume(data, value_range=(0.0, 1.0))
    tf = TransferFunction(v_min=0.0, v_max=1.0, opacity_max=0.9)
    fast = RenderSettings(tf=tf, lambda_v=0.1, step=0.5,
                          early_termination_alpha=0.99)
    full = RenderSettings(tf=tf, lambda_v=0.1, step=0.5,
                          early_termination_alpha=1.0)
    for k in range(20):
        origin = (8.0 + 6.0 * math.cos(k), 8.0 + 6.0 * math.sin(k), -5.0)
        d = np.array([8.0, 8.0, 8.0]) - np.asarray(origin)
        ray = Ray(origin, tuple(d / np.linalg.norm(d)))
        rgb_f, a_f, _ = march_ray(vol, ray, fast)
        rgb_t, a_t, _ = march_ray(vol, ray, full)
        assert abs(a_f - a_t) <= 0.01 + 1e-9
        for cf, ct in zip(rgb_f, rgb_t):
            assert abs(cf - ct) <= 0.01 + 1e-9


def test_march_accumulator_invariants():
    rng = np.random.default_rng(9)
    data = rng.uniform(0.0, 1.0, size=(12, 12, 12)).astype(np.float32)
    vol = make_volume(data, value_range=(0.0, 1.0))
    settings = RenderSettings(tf=TransferFunction(0.0, 1.0), lambda_v=0.3, step=0.3)
    for k in range(30):
        origin = (6 + 20 * math.cos(k * 0.7), 6 + 20 * math.sin(k * 0.7),
                  6 + 10 * math.sin(k * 1.3))
        d = np.array([6.0, 6.0, 6.0]) - np.asarray(origin)
        ray = Ray(origin, tuple(d / np.linalg.norm(d)))
        rgb, alpha, _ = march_ray(vol, ray, settings)
        assert 0.0 <= alpha <= 1.0
        assert max(rgb) <= alpha + 1e-6


def test_march_brick_skipping_identity():
    rng = np.random.default_rng(21)
    data = rng.uniform(0.0, 1.0, size=(20, 20, 20)).astype(np.float32)
    data[data < 0.85] = 0.0  # sparse content so bricks actually skip
    vol = make_volume(data, value_range=(0.0, 1.0))
    tf = TransferFunction(0.0, 1.0)
    on = RenderSettings(tf=tf, lambda_v=0.5, step=0.4, empty_space_skipping=True)
    off = RenderSettings(tf=tf, lambda_v=0.5, step=0.4, empty_space_skipping=False)
    for k in range(40):
        origin = (10 + 25 * math.cos(k), 10 + 25 * math.sin(k * 0.9),
                  10 + 15 * math.sin(k * 0.37))
        d = np.array([10.0, 10.0, 10.0]) - np.asarray(origin)
        ray = Ray(origin, tuple(d / np.linalg.norm(d)))
        got_on = march_ray(vol, ray, on)
        got_off = march_ray(vol, ray, off)
        assert got_on == got_off


def clipping_scene():
    """Blobs padded two voxels clear of the selection boundaries.

    Returns (volume, zeroed_volume, selection); marching the first under the
    selection must match marching the second unclipped, bit for bit.
    """
    T = n = m = 16
    data = np.zeros((T, n, m), dtype=np.float32)
    cx = np.arange(m) + 0.5
    cy = np.arange(n) + 0.5
    disk = ((cx[None, :] - 8.0) ** 2 + (cy[:, None] - 8.0) ** 2) <= 9.0
    data[7:9, disk] = 5.0            # inside time range and spotlight
    data[1:3, disk] = 7.0            # before the time range
    data[13:15, disk] = 7.5          # after the time range
    data[7:9, 1:3, 1:3] = 6.0        # inside time range, outside spotlight
    selection = SelectionState(time_range=(5, 10), spotlight=(8.0, 8.0, 5.0))

    zeroed = data.copy()
    tt = np.arange(T)
    time_out = (tt < 5) | (tt > 10)
    zeroed[time_out, :, :] = 0.0
    spot_out = ((cx[None, :] - 8.0) ** 2 + (cy[:, None] - 8.0) ** 2) > 25.0
    zeroed[:, spot_out] = 0.0

    vol_a = make_volume(data, value_range=(0.0, 8.0))
    vol_b = make_volume(zeroed, value_range=(0.0, 8.0))
    return vol_a, vol_b, selection


def ray_bundle(count):
    rays = []
    for k in range(count):
        origin = (8 + 30 * math.cos(k * 0.61), 8 + 30 * math.sin(k * 0.61),
                  8 + 18 * math.sin(k * 0.23))
        target = (8 + 3 * math.sin(k), 8 + 3 * math.cos(k * 1.7),
                  8 + 5 * math.sin(k * 0.5))
        d = np.asarray(target) - np.asarray(origin)
        rays.append(Ray(origin, tuple(d / np.linalg.norm(d))))
    return rays


def test_march_clipping_equals_zeroing_volume_mode():
    vol_a, vol_b, selection = clipping_scene()
    tf = TransferFunction(0.0, 8.0)
    settings = RenderSettings(tf=tf, lambda_v=0.5, step=0.3)
    full = SelectionState.full(16)
    for ray in ray_bundle(100):
        got = march_ray(vol_a, ray, settings, selection)
        want = march_ray(vol_b, ray, settings, full)
        assert got == want


def test_march_clipping_equals_zeroing_surface_mode():
    vol_a, vol_b, selection = clipping_scene()
    tf = TransferFunction(0.0, 8.0)
    settings = RenderSettings(tf=tf, lambda_v=0.5, step=0.3,
                              surface_enabled=True, lambda_i=4.0)
    full = SelectionState.full(16)
    for ray in ray_bundle(100):
        got = march_ray(vol_a, ray, settings, selection)
        want = march_ray(vol_b, ray, settings, full)
        assert got == want
