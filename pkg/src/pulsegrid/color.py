"""Mean-RGB to CIE-Lab conversion (sRGB companding, D65 white).

Only one triple per frame goes through here, so the scalar path uses plain
``math``; :func:`rgb_to_lab_array` is the vectorised twin for batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ColorRangeError

GAMMA_THRESHOLD = 0.04045
LINEAR_DIVISOR = 12.92
GAMMA_OFFSET = 0.055
GAMMA_SCALE = 1.055
GAMMA_EXPONENT = 2.4

RGB_TO_XYZ = (
    (0.4124, 0.3576, 0.1805),
    (0.2126, 0.7152, 0.0722),
    (0.0193, 0.1192, 0.9503),
)
# XYZ is scaled to Y=100 so white lands on this reference point.
XYZ_SCALE = 100.0
WHITE_D65 = (95.047, 100.000, 108.883)

F_THRESHOLD = 0.008856
F_SLOPE = 7.787
F_OFFSET = 4.0 / 29.0


@dataclass(frozen=True)
class LabSample:
    L_star: float
    a_star: float
    b_star: float
    timestamp_ms: float = 0.0
    frame_index: int = 0


def _linearize(c: float) -> float:
    if c > GAMMA_THRESHOLD:
        return ((c + GAMMA_OFFSET) / GAMMA_SCALE) ** GAMMA_EXPONENT
    return c / LINEAR_DIVISOR


def _f(v: float) -> float:
    if v > F_THRESHOLD:
        return v ** (1.0 / 3.0)
    return F_SLOPE * v + F_OFFSET


def _check(r, g, b):
    for c in (r, g, b):
        if not math.isfinite(c) or c < 0.0 or c > 255.0:
            raise ColorRangeError(f"RGB component {c!r} outside [0, 255]")


def rgb_to_lab(r: float, g: float, b: float) -> tuple[float, float, float]:
    """Convert one RGB triple on the 0-255 scale to ``(L*, a*, b*)``."""
    r, g, b = float(r), float(g), float(b)
    _check(r, g, b)
    rl = _linearize(r / 255.0)
    gl = _linearize(g / 255.0)
    bl = _linearize(b / 255.0)
    (m00, m01, m02), (m10, m11, m12), (m20, m21, m22) = RGB_TO_XYZ
    x = XYZ_SCALE * (m00 * rl + m01 * gl + m02 * bl)
    y = XYZ_SCALE * (m10 * rl + m11 * gl + m12 * bl)
    z = XYZ_SCALE * (m20 * rl + m21 * gl + m22 * bl)
    fx = _f(x / WHITE_D65[0])
    fy = _f(y / WHITE_D65[1])
    fz = _f(z / WHITE_D65[2])
    return 116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)


def to_lab_sample(rgb, timestamp_ms: float = 0.0, frame_index: int = 0) -> LabSample:
    L, a, b = rgb_to_lab(*rgb)
    return LabSample(L, a, b, timestamp_ms, frame_index)


def bvp_sample(lab: LabSample) -> float:
    """The raw blood-volume-pulse sample is the a* (green-red) coordinate."""
    return lab.a_star


def rgb_to_lab_array(rgb) -> np.ndarray:
    """Vectorised conversion of an (..., 3) array; same arithmetic as the scalar path."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.shape[-1] != 3:
        raise ValueError("last axis must hold RGB")
    if not np.all(np.isfinite(rgb)) or np.any(rgb < 0) or np.any(rgb > 255):
        raise ColorRangeError("RGB components must be finite and within [0, 255]")
    c = rgb / 255.0
    lin = np.where(
        c > GAMMA_THRESHOLD,
        ((c + GAMMA_OFFSET) / GAMMA_SCALE) ** GAMMA_EXPONENT,
        c / LINEAR_DIVISOR,
    )
    xyz = XYZ_SCALE * lin @ np.asarray(RGB_TO_XYZ).T
    v = xyz / np.asarray(WHITE_D65)
    f = np.where(v > F_THRESHOLD, np.cbrt(v), F_SLOPE * v + F_OFFSET)
    out = np.empty_like(f)
    out[..., 0] = 116.0 * f[..., 1] - 16.0
    out[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    out[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return out
