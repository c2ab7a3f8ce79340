"""Compiled numerical kernels for sampling, shading, and raymarching.

Everything here is nopython numba operating on plain arrays and scalars; the
public modules wrap these with typed dataclasses. fastmath stays off so
results are bit-reproducible across thread counts and machines; parallelism
is per-pixel-row with each row writing only its own output.

Coordinate conventions: the volume occupies render space
[0, m] x [0, n] x [0, T*z_scale]; voxel (x, y, t) is centered at
(x + 0.5, y + 0.5, (t + 0.5) * z_scale). Trilinear sampling clamps to the
outermost voxel centers, so a sample at an exact center returns the stored
value. Selection clipping treats a clipped sample exactly like a sample of
value 0: it composites nothing and its tracked value for isosurface
bracketing is 0, which is what marching a volume with those voxels zeroed
would see.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

F32_1D = "float32[::1]"


@njit(cache=True)
def tf_color(u, stops):
    """Piecewise-linear color through (u, r, g, b) stops sorted by u."""
    k = stops.shape[0]
    if u <= stops[0, 0]:
        return stops[0, 1], stops[0, 2], stops[0, 3]
    for i in range(1, k):
        if u <= stops[i, 0]:
            span = stops[i, 0] - stops[i - 1, 0]
            f = 0.0 if span <= 0.0 else (u - stops[i - 1, 0]) / span
            return (
                stops[i - 1, 1] + f * (stops[i, 1] - stops[i - 1, 1]),
                stops[i - 1, 2] + f * (stops[i, 2] - stops[i - 1, 2]),
                stops[i - 1, 3] + f * (stops[i, 3] - stops[i - 1, 3]),
            )
    return stops[k - 1, 1], stops[k - 1, 2], stops[k - 1, 3]


@njit(cache=True)
def tf_alpha(u, opacity_max, opacity_gamma, step, reference_step):
    """Raw opacity opacity_max * u^gamma, corrected for the step length."""
    a = opacity_max * u ** opacity_gamma
    if a >= 1.0:
        return 1.0
    return 1.0 - (1.0 - a) ** (step / reference_step)


@njit(cache=True)
def trilinear(data, z_scale, px, py, pz):
    """Trilinear sample of a (T, n, m) grid at a render-space point."""
    T, n, m = data.shape
    xi = px - 0.5
    yi = py - 0.5
    zi = pz / z_scale - 0.5
    if xi < 0.0:
        xi = 0.0
    elif xi > m - 1.0:
        xi = m - 1.0
    if yi < 0.0:
        yi = 0.0
    elif yi > n - 1.0:
        yi = n - 1.0
    if zi < 0.0:
        zi = 0.0
    elif zi > T - 1.0:
        zi = T - 1.0
    x0 = int(math.floor(xi))
    y0 = int(math.floor(yi))
    t0 = int(math.floor(zi))
    x1 = x0 + 1 if x0 + 1 < m else m - 1
    y1 = y0 + 1 if y0 + 1 < n else n - 1
    t1 = t0 + 1 if t0 + 1 < T else T - 1
    fx = xi - x0
    fy = yi - y0
    ft = zi - t0
    c00 = data[t0, y0, x0] * (1.0 - fx) + data[t0, y0, x1] * fx
    c10 = data[t0, y1, x0] * (1.0 - fx) + data[t0, y1, x1] * fx
    c01 = data[t1, y0, x0] * (1.0 - fx) + data[t1, y0, x1] * fx
    c11 = data[t1, y1, x0] * (1.0 - fx) + data[t1, y1, x1] * fx
    c0 = c00 * (1.0 - fy) + c10 * fy
    c1 = c01 * (1.0 - fy) + c11 * fy
    return c0 * (1.0 - ft) + c1 * ft


@njit(cache=True)
def gradient3(data, z_scale, px, py, pz):
    """Finite-difference gradient in value-per-voxel units.

    Central differences with one-voxel spacing; clamped to one-sided at the
    box boundary.
    """
    T, n, m = data.shape
    xp = px + 1.0 if px + 1.0 <= m else float(m)
    xm = px - 1.0 if px - 1.0 >= 0.0 else 0.0
    yp = py + 1.0 if py + 1.0 <= n else float(n)
    ym = py - 1.0 if py - 1.0 >= 0.0 else 0.0
    zmax = T * z_scale
    zp = pz + z_scale if pz + z_scale <= zmax else zmax
    zm = pz - z_scale if pz - z_scale >= 0.0 else 0.0
    gx = (trilinear(data, z_scale, xp, py, pz) - trilinear(data, z_scale, xm, py, pz)) / (xp - xm)
    gy = (trilinear(data, z_scale, px, yp, pz) - trilinear(data, z_scale, px, ym, pz)) / (yp - ym)
    dz_vox = (zp - zm) / z_scale
    if dz_vox > 0.0:
        gt = (trilinear(data, z_scale, px, py, zp) - trilinear(data, z_scale, px, py, zm)) / dz_vox
    else:
        gt = 0.0
    return gx, gy, gt


@njit(cache=True)
def phong(br, bg, bb, nx, ny, nz, vx, vy, vz,
          ambient, diffuse, specular, shininess, lx, ly, lz):
    """Phong shading of a base color; view and light vectors unit length.

    Specular is gated on a lit surface (n.l > 0) and adds a white highlight.
    A zero normal degrades to ambient-only.
    """
    nl = math.sqrt(nx * nx + ny * ny + nz * nz)
    if nl <= 0.0:
        r = br * ambient
        g = bg * ambient
        b = bb * ambient
    else:
        nx /= nl
        ny /= nl
        nz /= nl
        # face the viewer
        if nx * vx + ny * vy + nz * vz < 0.0:
            nx = -nx
            ny = -ny
            nz = -nz
        ndotl = nx * lx + ny * ly + nz * lz
        if ndotl < 0.0:
            ndotl = 0.0
        base_term = ambient + diffuse * ndotl
        spec_term = 0.0
        if ndotl > 0.0 and specular > 0.0:
            # r = 2 (n.l) n - l, specular on r.v
            rx = 2.0 * ndotl * nx - lx
            ry = 2.0 * ndotl * ny - ly
            rz = 2.0 * ndotl * nz - lz
            rv = rx * vx + ry * vy + rz * vz
            if rv > 0.0:
                spec_term = specular * rv ** shininess
        r = br * base_term + spec_term
        g = bg * base_term + spec_term
        b = bb * base_term + spec_term
    if r > 1.0:
        r = 1.0
    if g > 1.0:
        g = 1.0
    if b > 1.0:
        b = 1.0
    if r < 0.0:
        r = 0.0
    if g < 0.0:
        g = 0.0
    if b < 0.0:
        b = 0.0
    return r, g, b


@njit(cache=True)
def ray_box(ox, oy, oz, dx, dy, dz, bx, by, bz):
    """Entry/exit distances of a ray against [0,bx]x[0,by]x[0,bz]; exit<entry on miss."""
    tmin = 0.0
    tmax = 1e300
    for axis in range(3):
        if axis == 0:
            o, d, hi = ox, dx, bx
        elif axis == 1:
            o, d, hi = oy, dy, by
        else:
            o, d, hi = oz, dz, bz
        if abs(d) < 1e-300:
            if o < 0.0 or o > hi:
                return 1.0, -1.0
        else:
            t1 = (0.0 - o) / d
            t2 = (hi - o) / d
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
    return tmin, tmax


@njit(cache=True)
def brick_exit(px, py, pz, dx, dy, dz, bsize, z_scale):
    """Distance from p to the exit face of p's containing brick (>= 0)."""
    sx = bsize
    sy = bsize
    sz = bsize * z_scale
    bx0 = math.floor(px / sx) * sx
    by0 = math.floor(py / sy) * sy
    bz0 = math.floor(pz / sz) * sz
    best = 1e300
    if dx > 1e-300:
        t = (bx0 + sx - px) / dx
        if t < best:
            best = t
    elif dx < -1e-300:
        t = (bx0 - px) / dx
        if t < best:
            best = t
    if dy > 1e-300:
        t = (by0 + sy - py) / dy
        if t < best:
            best = t
    elif dy < -1e-300:
        t = (by0 - py) / dy
        if t < best:
            best = t
    if dz > 1e-300:
        t = (bz0 + sz - pz) / dz
        if t < best:
            best = t
    elif dz < -1e-300:
        t = (bz0 - pz) / dz
        if t < best:
            best = t
    return best


@njit(cache=True)
def march_one(data, z_scale,
              ox, oy, oz, dx, dy, dz,
              stops, tf_vmin, tf_vmax, opacity_max, opacity_gamma, ref_step,
              lambda_v, surface_enabled, lambda_i, step,
              ambient, diffuse, specular, shininess, lx, ly, lz,
              early_alpha, g_min,
              t_lo, t_hi, spot_on, spot_cx, spot_cy, spot_r2,
              plane_on, plane_s, plane_r, plane_g, plane_b,
              bricks, use_bricks, brick_size):
    """March one ray through the volume; front-to-back premultiplied compositing.

    Returns (r, g, b, alpha, hit_found, hx, hy, hz). The opaque map plane at
    distance plane_s merges in depth order and only while the accumulated
    alpha has not crossed early_alpha.
    """
    T, n, m = data.shape
    bz = T * z_scale
    t_enter, t_exit = ray_box(ox, oy, oz, dx, dy, dz, float(m), float(n), bz)
    if t_enter < 0.0:
        t_enter = 0.0

    acc_r = 0.0
    acc_g = 0.0
    acc_b = 0.0
    acc_a = 0.0
    hit_found = False
    hx = 0.0
    hy = 0.0
    hz = 0.0
    plane_pending = plane_on
    tf_span = tf_vmax - tf_vmin

    if t_exit <= t_enter:
        if plane_pending:
            return plane_r, plane_g, plane_b, 1.0, False, 0.0, 0.0, 0.0
        return 0.0, 0.0, 0.0, 0.0, False, 0.0, 0.0, 0.0

    span = t_exit - t_enter
    n_samp = int(span / step + 1e-7)
    inv_zscale = 1.0 / z_scale

    have_prev = False
    v_prev = 0.0
    s_prev = 0.0

    i = 0
    while i < n_samp:
        s = t_enter + (i + 0.5) * step
        px = ox + s * dx
        py = oy + s * dy
        pz = oz + s * dz

        if use_bricks and not surface_enabled:
            vx = int(px)
            if vx >= m:
                vx = m - 1
            vy = int(py)
            if vy >= n:
                vy = n - 1
            vt = int(pz * inv_zscale)
            if vt >= T:
                vt = T - 1
            if bricks[vt // brick_size, vy // brick_size, vx // brick_size] < lambda_v:
                # nothing in this brick can composite; stay on the sample
                # lattice so the output is unchanged
                jump = brick_exit(px, py, pz, dx, dy, dz, brick_size, z_scale)
                skip = int(jump / step)
                if skip < 1:
                    skip = 1
                i += skip
                continue

        v_raw = float(trilinear(data, z_scale, px, py, pz))
        vt = int(pz * inv_zscale)
        if vt >= T:
            vt = T - 1
        sel_ok = vt >= t_lo and vt <= t_hi
        if sel_ok and spot_on:
            ddx = px - spot_cx
            ddy = py - spot_cy
            sel_ok = ddx * ddx + ddy * ddy <= spot_r2
        v_track = v_raw if sel_ok else 0.0

        # isosurface bracket over consecutive tracked values
        if surface_enabled and have_prev:
            crossed = (v_prev < lambda_i) != (v_track < lambda_i)
            if crossed:
                denom = v_track - v_prev
                frac = 1.0 if denom == 0.0 else (lambda_i - v_prev) / denom
                if frac < 0.0:
                    frac = 0.0
                elif frac > 1.0:
                    frac = 1.0
                s_hit = s_prev + frac * (s - s_prev)
                if plane_pending and plane_s < s_hit:
                    acc_r += (1.0 - acc_a) * plane_r
                    acc_g += (1.0 - acc_a) * plane_g
                    acc_b += (1.0 - acc_a) * plane_b
                    acc_a = 1.0
                    return acc_r, acc_g, acc_b, acc_a, hit_found, hx, hy, hz
                qx = ox + s_hit * dx
                qy = oy + s_hit * dy
                qz = oz + s_hit * dz
                u = (lambda_i - tf_vmin) / tf_span
                if u < 0.0:
                    u = 0.0
                elif u > 1.0:
                    u = 1.0
                br, bg, bb = tf_color(u, stops)
                gx, gy, gt = gradient3(data, z_scale, qx, qy, qz)
                sr, sg, sb = phong(br, bg, bb, gx, gy, gt, -dx, -dy, -dz,
                                   ambient, diffuse, specular, shininess,
                                   lx, ly, lz)
                acc_r += (1.0 - acc_a) * sr
                acc_g += (1.0 - acc_a) * sg
                acc_b += (1.0 - acc_a) * sb
                acc_a = 1.0
                if not hit_found:
                    hit_found = True
                    hx = qx
                    hy = qy
                    hz = qz
                return acc_r, acc_g, acc_b, acc_a, hit_found, hx, hy, hz

        # opaque map plane sits between the previous sample and this one
        if plane_pending and s > plane_s:
            acc_r += (1.0 - acc_a) * plane_r
            acc_g += (1.0 - acc_a) * plane_g
            acc_b += (1.0 - acc_a) * plane_b
            acc_a = 1.0
            return acc_r, acc_g, acc_b, acc_a, hit_found, hx, hy, hz

        if sel_ok and v_raw >= lambda_v:
            u = (v_raw - tf_vmin) / tf_span
            if u < 0.0:
                u = 0.0
            elif u > 1.0:
                u = 1.0
            br, bg, bb = tf_color(u, stops)
            a_s = tf_alpha(u, opacity_max, opacity_gamma, step, ref_step)
            gx, gy, gt = gradient3(data, z_scale, px, py, pz)
            gmag = math.sqrt(gx * gx + gy * gy + gt * gt)
            if gmag > g_min:
                br, bg, bb = phong(br, bg, bb, gx, gy, gt, -dx, -dy, -dz,
                                   ambient, diffuse, specular, shininess,
                                   lx, ly, lz)
            acc_r += (1.0 - acc_a) * br * a_s
            acc_g += (1.0 - acc_a) * bg * a_s
            acc_b += (1.0 - acc_a) * bb * a_s
            acc_a += (1.0 - acc_a) * a_s
            if not hit_found:
                hit_found = True
                hx = px
                hy = py
                hz = pz
            if acc_a >= early_alpha:
                return acc_r, acc_g, acc_b, acc_a, hit_found, hx, hy, hz

        have_prev = True
        v_prev = v_track
        s_prev = s
        i += 1

    if plane_pending and acc_a < early_alpha:
        acc_r += (1.0 - acc_a) * plane_r
        acc_g += (1.0 - acc_a) * plane_g
        acc_b += (1.0 - acc_a) * plane_b
        acc_a = 1.0
    return acc_r, acc_g, acc_b, acc_a, hit_found, hx, hy, hz


@njit(cache=True)
def map_plane_hit(ox, oy, oz, dx, dy, dz, plane_z, m, n):
    """Ray distance to the z=plane_z plane inside the volume footprint, or -1."""
    if abs(dz) < 1e-12:
        return -1.0
    s = (plane_z - oz) / dz
    if s <= 1e-9:
        return -1.0
    x = ox + s * dx
    y = oy + s * dy
    if x < 0.0 or x > m or y < 0.0 or y > n:
        return -1.0
    return s


@njit(cache=True)
def sample_map(tex, u, v):
    """Bilinear sample of an (h, w, 3) texture with u, v in [0, 1]."""
    h, w = tex.shape[0], tex.shape[1]
    fx = u * (w - 1)
    fy = v * (h - 1)
    if fx < 0.0:
        fx = 0.0
    elif fx > w - 1.0:
        fx = w - 1.0
    if fy < 0.0:
        fy = 0.0
    elif fy > h - 1.0:
        fy = h - 1.0
    x0 = int(math.floor(fx))
    y0 = int(math.floor(fy))
    x1 = x0 + 1 if x0 + 1 < w else w - 1
    y1 = y0 + 1 if y0 + 1 < h else h - 1
    ax = fx - x0
    ay = fy - y0
    out = np.empty(3, dtype=np.float64)
    for c in range(3):
        c0 = tex[y0, x0, c] * (1.0 - ax) + tex[y0, x1, c] * ax
        c1 = tex[y1, x0, c] * (1.0 - ax) + tex[y1, x1, c] * ax
        out[c] = c0 * (1.0 - ay) + c1 * ay
    return out


@njit(cache=True, parallel=True)
def render_pixels(out, data, z_scale,
                  ex, ey, ez, rx, ry, rz, ux, uy, uz, fx, fy, fz,
                  tan_half, aspect,
                  stops, tf_vmin, tf_vmax, opacity_max, opacity_gamma, ref_step,
                  lambda_v, surface_enabled, lambda_i, step,
                  ambient, diffuse, specular, shininess, lx, ly, lz,
                  early_alpha, g_min,
                  t_lo, t_hi, spot_on, spot_cx, spot_cy, spot_r2,
                  map_on, map_tex, plane_z,
                  bg_r, bg_g, bg_b,
                  bricks, use_bricks, brick_size):
    """One march per pixel into a uint8 (H, W, 4) buffer, rows in parallel."""
    H, W = out.shape[0], out.shape[1]
    T, n, m = data.shape
    for j in prange(H):
        ndc_y = 1.0 - (j + 0.5) / H * 2.0
        for i in range(W):
            ndc_x = (i + 0.5) / W * 2.0 - 1.0
            dx = fx + ndc_x * tan_half * aspect * rx + ndc_y * tan_half * ux
            dy = fy + ndc_x * tan_half * aspect * ry + ndc_y * tan_half * uy
            dz = fz + ndc_x * tan_half * aspect * rz + ndc_y * tan_half * uz
            norm = math.sqrt(dx * dx + dy * dy + dz * dz)
            dx /= norm
            dy /= norm
            dz /= norm

            plane_on = False
            plane_s = -1.0
            pr = 0.0
            pg = 0.0
            pb = 0.0
            if map_on:
                plane_s = map_plane_hit(ex, ey, ez, dx, dy, dz,
                                        plane_z, float(m), float(n))
                if plane_s > 0.0:
                    hxp = ex + plane_s * dx
                    hyp = ey + plane_s * dy
                    rgbm = sample_map(map_tex, hxp / m, 1.0 - hyp / n)
                    pr = rgbm[0]
                    pg = rgbm[1]
                    pb = rgbm[2]
                    plane_on = True

            r, g, b, a, _, _, _, _ = march_one(
                data, z_scale, ex, ey, ez, dx, dy, dz,
                stops, tf_vmin, tf_vmax, opacity_max, opacity_gamma, ref_step,
                lambda_v, surface_enabled, lambda_i, step,
                ambient, diffuse, specular, shininess, lx, ly, lz,
                early_alpha, g_min,
                t_lo, t_hi, spot_on, spot_cx, spot_cy, spot_r2,
                plane_on, plane_s, pr, pg, pb,
                bricks, use_bricks, brick_size)

            r = r + (1.0 - a) * bg_r
            g = g + (1.0 - a) * bg_g
            b = b + (1.0 - a) * bg_b
            ir = int(r * 255.0 + 0.5)
            ig = int(g * 255.0 + 0.5)
            ib = int(b * 255.0 + 0.5)
            if ir > 255:
                ir = 255
            if ig > 255:
                ig = 255
            if ib > 255:
                ib = 255
            out[j, i, 0] = ir
            out[j, i, 1] = ig
            out[j, i, 2] = ib
            out[j, i, 3] = 255
