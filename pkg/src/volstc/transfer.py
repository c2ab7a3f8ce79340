"""Transfer function, lighting, and render settings.

The transfer function maps a scalar value to a color and an opacity. Values
normalize to u = clamp((v - v_min)/(v_max - v_min), 0, 1); color is
piecewise-linear through the stops; raw opacity is opacity_max * u^gamma and
gets corrected for the actual sampling step so the accumulated result is
step-size independent: alpha_sample = 1 - (1 - a)^(step / reference_step).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels

# green -> yellow -> red, denser and redder as values grow
DEFAULT_STOPS = (
    (0.0, (0.0, 0.8, 0.0)),
    (0.5, (1.0, 1.0, 0.0)),
    (1.0, (1.0, 0.0, 0.0)),
)


@dataclass(frozen=True)
class TransferFunction:
    """Value -> (color, opacity) mapping over [v_min, v_max]."""

    v_min: float
    v_max: float
    color_stops: tuple = DEFAULT_STOPS
    opacity_gamma: float = 2.0
    opacity_max: float = 0.9
    reference_step: float = 1.0

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError("transfer function requires v_min < v_max")
        if not self.opacity_gamma > 0:
            raise ValueError("opacity_gamma must be positive")
        if not 0.0 < self.opacity_max <= 1.0:
            raise ValueError("opacity_max must be in (0, 1]")
        if not self.reference_step > 0:
            raise ValueError("reference_step must be positive")
        us = [u for u, _ in self.color_stops]
        if us != sorted(us) or us[0] != 0.0 or us[-1] != 1.0:
            raise ValueError("color_stops must be sorted and cover u=0 and u=1")

    def normalized(self, value: float) -> float:
        u = (value - self.v_min) / (self.v_max - self.v_min)
        return min(max(u, 0.0), 1.0)

    def stops_array(self) -> np.ndarray:
        """Stops as a (K, 4) float64 array of (u, r, g, b) rows."""
        return np.array([(u, r, g, b) for u, (r, g, b) in self.color_stops],
                        dtype=np.float64)

    @staticmethod
    def for_range(value_range: tuple) -> "TransferFunction":
        return TransferFunction(v_min=float(value_range[0]), v_max=float(value_range[1]))


@dataclass(frozen=True)
class Lighting:
    """Phong coefficients; light_direction points from surface toward the light."""

    ambient: float = 0.3
    diffuse: float = 0.6
    specular: float = 0.2
    shininess: float = 32.0
    light_direction: tuple = (0.408248, 0.408248, 0.816497)

    def __post_init__(self):
        for name in ("ambient", "diffuse", "specular"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not self.shininess >= 1.0:
            raise ValueError("shininess must be >= 1")

    def unit_light(self) -> np.ndarray:
        l = np.asarray(self.light_direction, dtype=np.float64)
        norm = np.linalg.norm(l)
        if not norm > 0:
            raise ValueError("light_direction must be non-zero")
        return l / norm


@dataclass(frozen=True)
class RenderSettings:
    """Everything a march needs besides the volume, camera, and selection.

    step is in render-space units; None means half the smallest voxel edge
    of the volume being rendered. lambda_i defaults to lambda_v when None.
    g_min is the gradient-magnitude floor below which volume samples are
    composited unshaded; None means 1e-3 of the transfer value range.
    """

    tf: TransferFunction
    lambda_v: float = 0.0
    surface_enabled: bool = False
    lambda_i: Optional[float] = None
    step: Optional[float] = None
    lighting: Lighting = field(default_factory=Lighting)
    background: tuple = (1.0, 1.0, 1.0)
    early_termination_alpha: float = 0.99
    g_min: Optional[float] = None
    empty_space_skipping: bool = True

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if not 0.0 < self.early_termination_alpha <= 1.0:
            raise ValueError("early_termination_alpha must be in (0, 1]")

    def resolved_lambda_i(self) -> float:
        return self.lambda_v if self.lambda_i is None else self.lambda_i

    def resolved_step(self, z_scale: float) -> float:
        if self.step is not None:
            return self.step
        return min(1.0, z_scale) / 2.0

    def resolved_g_min(self) -> float:
        if self.g_min is not None:
            return self.g_min
        return 1e-3 * (self.tf.v_max - self.tf.v_min)


def transfer(value: float, settings: RenderSettings, step: Optional[float] = None):
    """Color and step-corrected opacity of a value under the settings.

    ``step`` overrides settings.step; with neither given the sample is taken
    at the transfer function's reference step.
    """
    tf = settings.tf
    if step is None:
        step = settings.step if settings.step is not None else tf.reference_step
    u = tf.normalized(float(value))
    rgb = _kernels.tf_color(u, tf.stops_array())
    alpha = _kernels.tf_alpha(u, tf.opacity_max, tf.opacity_gamma,
                              float(step), tf.reference_step)
    return rgb, alpha
