"""Full-frame rendering: per-pixel marching plus contextual geometry.

The frame kernel composites the volume and, when configured, an opaque
textured map plane at the height of the selection's lower time bound, in
correct depth order. The bounding-box wireframe and the axis-box edges are
drawn afterward as projected overlay lines; text labels are left to clients,
which get anchor pixels in FrameMeta.

Deterministic by construction: rows are rendered independently with no
shared accumulation, so thread scheduling cannot change pixel values.
"""
from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

from . import _kernels
from .model import Camera, SelectionState, SpaceTimeVolume, default_z_scale
from .raymarch import BRICK_SIZE, _NO_BRICKS, Ray, _march_args, brick_grid
from .transfer import RenderSettings


@dataclass
class RenderContext:
    """Presentation options that are not part of the render settings.

    map_image: optional (h, w, 3) RGB texture (uint8 or float in [0,1]) laid
    over the volume footprint, row 0 at the north edge. Drawn at the height
    of the selection's lower time bound.
    """

    map_image: Optional[np.ndarray] = None
    draw_wireframe: bool = True
    axis_box_count: int = 6
    line_color: tuple = (0.45, 0.45, 0.52)
    z_scale: Optional[float] = None


@dataclass
class FrameMeta:
    """Client-side overlay data for one rendered frame.

    axis_boxes: (t_start, t_end, anchor) with anchors in pixel coordinates
    (None when the anchor projects behind the camera); the boxes tile [0, T)
    without overlap. map_plane_t is the step index of the map plane height.
    view_id identifies the camera/viewport so pick rays can be correlated
    with the frame they were aimed at.
    """

    width: int
    height: int
    z_scale: float
    axis_boxes: list = field(default_factory=list)
    map_plane_t: int = 0
    view_id: str = ""

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "z_scale": self.z_scale,
            "axis_boxes": [
                {"t_start": a, "t_end": b,
                 "anchor": None if p is None else [p[0], p[1]]}
                for a, b, p in self.axis_boxes
            ],
            "map_plane_t": self.map_plane_t,
            "view_id": self.view_id,
        }


def pixel_ray(camera: Camera, px: float, py: float) -> Ray:
    """Ray through the center of pixel (px, py); y grows downward."""
    right, up, fwd = camera.basis()
    tan_half = math.tan(math.radians(camera.vfov) / 2.0)
    aspect = camera.width / camera.height
    ndc_x = (px + 0.5) / camera.width * 2.0 - 1.0
    ndc_y = 1.0 - (py + 0.5) / camera.height * 2.0
    d = fwd + ndc_x * tan_half * aspect * right + ndc_y * tan_half * up
    return Ray(origin=tuple(camera.eye), direction=tuple(d))


def project_point(camera: Camera, p) -> Optional[tuple]:
    """Pixel coordinates of a render-space point; None behind the camera."""
    right, up, fwd = camera.basis()
    v = np.asarray(p, dtype=np.float64) - np.asarray(camera.eye, dtype=np.float64)
    z = float(np.dot(v, fwd))
    if z <= 1e-9:
        return None
    tan_half = math.tan(math.radians(camera.vfov) / 2.0)
    aspect = camera.width / camera.height
    ndc_x = float(np.dot(v, right)) / (z * tan_half * aspect)
    ndc_y = float(np.dot(v, up)) / (z * tan_half)
    px = (ndc_x + 1.0) / 2.0 * camera.width - 0.5
    py = (1.0 - ndc_y) / 2.0 * camera.height - 0.5
    return px, py


def view_signature(camera: Camera) -> str:
    """Stable id of the camera + viewport, for correlating picks to frames."""
    payload = repr((tuple(camera.eye), tuple(camera.target), tuple(camera.up),
                    float(camera.vfov), camera.width, camera.height))
    return hashlib.sha1(payload.encode()).hexdigest()[:16]


def axis_boxes(T: int, count: int) -> list:
    """Partition [0, T) into up to `count` contiguous step ranges."""
    if count < 1:
        raise ValueError("axis box count must be >= 1")
    bounds = [round(k * T / count) for k in range(count + 1)]
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b > a:
            out.append((a, b))
    return out


def _draw_line(img: np.ndarray, p0, p1, rgb: tuple) -> None:
    """Solid line from p0 to p1 (pixel coords), clipped to the image."""
    h, w = img.shape[0], img.shape[1]
    x0, y0 = p0
    x1, y1 = p1
    steps = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    r8 = int(rgb[0] * 255.0 + 0.5)
    g8 = int(rgb[1] * 255.0 + 0.5)
    b8 = int(rgb[2] * 255.0 + 0.5)
    for k in range(steps + 1):
        f = k / steps
        xi = int(round(x0 + f * (x1 - x0)))
        yi = int(round(y0 + f * (y1 - y0)))
        if 0 <= xi < w and 0 <= yi < h:
            img[yi, xi, 0] = r8
            img[yi, xi, 1] = g8
            img[yi, xi, 2] = b8
            img[yi, xi, 3] = 255


def _draw_segments(img, camera, segments, rgb) -> None:
    for a, b in segments:
        pa = project_point(camera, a)
        pb = project_point(camera, b)
        if pa is None or pb is None:
            continue
        _draw_line(img, pa, pb, rgb)


def _box_rectangle(m, n, z) -> list:
    return [
        ((0.0, 0.0, z), (m, 0.0, z)),
        ((m, 0.0, z), (m, n, z)),
        ((m, n, z), (0.0, n, z)),
        ((0.0, n, z), (0.0, 0.0, z)),
    ]


def _prep_map(tex: np.ndarray) -> np.ndarray:
    if tex.ndim != 3 or tex.shape[2] < 3:
        raise ValueError("map image must be (h, w, 3)")
    t = tex[:, :, :3]
    if t.dtype == np.uint8:
        t = t.astype(np.float32) / 255.0
    else:
        t = np.clip(t.astype(np.float32), 0.0, 1.0)
    return np.ascontiguousarray(t)


def render_frame(volume: SpaceTimeVolume, camera: Camera,
                 settings: RenderSettings,
                 selection: Optional[SelectionState] = None,
                 context: Optional[RenderContext] = None):
    """Render one frame; returns (rgba uint8 (H, W, 4), FrameMeta)."""
    camera.validate()
    if context is None:
        context = RenderContext()
    if selection is None:
        selection = SelectionState.full(volume.T)
    selection.validate(volume.T)

    z_scale = context.z_scale
    if z_scale is None:
        z_scale = default_z_scale(volume.m, volume.n, volume.T)

    right, up, fwd = camera.basis()
    tan_half = math.tan(math.radians(camera.vfov) / 2.0)
    aspect = camera.width / camera.height

    args, _ = _march_args(volume, settings, selection, z_scale)
    use_bricks = settings.empty_space_skipping and not settings.surface_enabled
    bricks = brick_grid(volume) if use_bricks else _NO_BRICKS

    t_lo = int(selection.time_range[0])
    if context.map_image is not None:
        map_tex = _prep_map(context.map_image)
        map_on = True
    else:
        map_tex = np.zeros((1, 1, 3), dtype=np.float32)
        map_on = False
    plane_z = t_lo * z_scale

    out = np.empty((camera.height, camera.width, 4), dtype=np.uint8)
    bg = settings.background
    _kernels.render_pixels(
        out, volume.data, z_scale,
        float(camera.eye[0]), float(camera.eye[1]), float(camera.eye[2]),
        right[0], right[1], right[2],
        up[0], up[1], up[2],
        fwd[0], fwd[1], fwd[2],
        tan_half, aspect,
        *args,
        map_on, map_tex, plane_z,
        float(bg[0]), float(bg[1]), float(bg[2]),
        bricks, use_bricks, BRICK_SIZE)

    m, n, T = volume.m, volume.n, volume.T
    boxes = axis_boxes(T, context.axis_box_count)
    if context.draw_wireframe:
        segments = []
        top = T * z_scale
        segments += _box_rectangle(float(m), float(n), 0.0)
        segments += _box_rectangle(float(m), float(n), top)
        for cx, cy in ((0.0, 0.0), (m, 0.0), (m, n), (0.0, n)):
            segments.append(((float(cx), float(cy), 0.0), (float(cx), float(cy), top)))
        for a, _b in boxes[1:]:
            segments += _box_rectangle(float(m), float(n), a * z_scale)
        _draw_segments(out, camera, segments, context.line_color)

    meta = FrameMeta(
        width=camera.width,
        height=camera.height,
        z_scale=z_scale,
        axis_boxes=[(a, b, project_point(camera, (0.0, 0.0, a * z_scale)))
                    for a, b in boxes],
        map_plane_t=t_lo,
        view_id=view_signature(camera),
    )
    return out, meta


def encode_png(image: np.ndarray) -> bytes:
    """Lossless PNG bytes of an (H, W, 4) uint8 frame."""
    buf = io.BytesIO()
    Image.fromarray(image, "RGBA").save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def save_png(image: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(image))
