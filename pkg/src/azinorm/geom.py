"""
Coordinate types and the per-patch azimuth normalization transform.

A patch frame is obtained from the LiDAR frame by translating the patch
center to the origin and rotating about +Z by minus the center's azimuth,
so the ray from the sensor through the patch center becomes +X.
Everything here is float64 and side-effect free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

TWO_PI = 2.0 * math.pi


class InvalidInputError(ValueError):
    """Raised for non-finite or otherwise malformed geometric input."""


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise InvalidInputError(f"non-finite value: {v!r}")


def wrap_angle(a: float) -> float:
    """Map an angle in radians to (-pi, pi].

    Values already in range are returned untouched, which makes the
    operation exactly idempotent.
    """
    a = float(a)
    _check_finite(a)
    if -math.pi < a <= math.pi:
        return a
    w = math.pi - math.fmod(math.pi - a, TWO_PI)
    # fmod keeps the sign of its first argument
    if w > math.pi:
        w -= TWO_PI
    elif w <= -math.pi:
        w += TWO_PI
    if w > math.pi:
        w = math.pi
    return w


def wrap_angles(a) -> np.ndarray:
    """Vectorized :func:`wrap_angle`."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("non-finite angle in array")
    out = a.copy()
    bad = (out <= -np.pi) | (out > np.pi)
    if np.any(bad):
        w = np.pi - np.fmod(np.pi - out[bad], TWO_PI)
        w = np.where(w > np.pi, w - TWO_PI, w)
        w = np.where(w <= -np.pi, w + TWO_PI, w)
        out[bad] = np.minimum(w, np.pi)
    return out


def azimuth_of(center) -> float:
    """Polar angle of a BEV location against +X, in (-pi, pi].

    The origin has no defined azimuth; it gets 0 so the center patch is
    left unrotated.
    """
    cx, cy = float(center[0]), float(center[1])
    _check_finite(cx, cy)
    if cx == 0.0 and cy == 0.0:
        return 0.0
    return wrap_angle(math.atan2(cy, cx))


def rotate_xy(xy, angle: float) -> np.ndarray:
    """Rotate the first two columns of ``xy`` counter-clockwise by ``angle``.

    Extra columns are passed through.
    """
    xy = np.asarray(xy, dtype=np.float64)
    c, s = math.cos(angle), math.sin(angle)
    out = xy.copy()
    x, y = xy[..., 0], xy[..., 1]
    out[..., 0] = c * x - s * y
    out[..., 1] = s * x + c * y
    return out


def rot90_xy(xy, quarter_turns: int) -> np.ndarray:
    """Exact rotation by a multiple of 90 degrees (no trigonometry)."""
    xy = np.asarray(xy, dtype=np.float64)
    out = xy.copy()
    k = quarter_turns % 4
    x, y = xy[..., 0], xy[..., 1]
    if k == 1:
        out[..., 0], out[..., 1] = -y, x
    elif k == 2:
        out[..., 0], out[..., 1] = -x, -y
    elif k == 3:
        out[..., 0], out[..., 1] = y, -x
    return out


@dataclass(frozen=True)
class NormTransform:
    """Rigid BEV transform into a patch frame.

    Build it with :meth:`at` so that ``theta`` is the azimuth of ``center``.
    """

    center: Tuple[float, float]
    theta: float

    @classmethod
    def at(cls, center) -> "NormTransform":
        cx, cy = float(center[0]), float(center[1])
        return cls((cx, cy), azimuth_of((cx, cy)))

    @property
    def cos(self) -> float:
        return math.cos(self.theta)

    @property
    def sin(self) -> float:
        return math.sin(self.theta)


def normalize_point(t: NormTransform, p) -> np.ndarray:
    """Map LiDAR-frame points (shape ``(..., >=2)``) into the patch frame.

    Columns after x, y (z, intensity, ...) are not touched.
    """
    p = np.asarray(p, dtype=np.float64)
    c, s = t.cos, t.sin
    dx = p[..., 0] - t.center[0]
    dy = p[..., 1] - t.center[1]
    out = p.copy()
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    return out


def denormalize_point(t: NormTransform, p) -> np.ndarray:
    """Inverse of :func:`normalize_point`: rotate by +theta, then translate back."""
    p = np.asarray(p, dtype=np.float64)
    c, s = t.cos, t.sin
    x, y = p[..., 0], p[..., 1]
    out = p.copy()
    out[..., 0] = c * x - s * y + t.center[0]
    out[..., 1] = s * x + c * y + t.center[1]
    return out


@dataclass(frozen=True)
class OrientedBox:
    """BEV-oriented 3D box. ``yaw`` is the heading of the length axis."""

    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    yaw: float
    score: float = 1.0
    class_id: int = 0

    def __post_init__(self):
        _check_finite(self.cx, self.cy, self.cz, self.length, self.width,
                      self.height, self.yaw, self.score)
        if not (self.length > 0 and self.width > 0 and self.height > 0):
            raise InvalidInputError(
                f"box dimensions must be positive, got "
                f"{(self.length, self.width, self.height)}")
        if not (-math.pi < self.yaw <= math.pi):
            raise InvalidInputError(f"yaw {self.yaw!r} outside (-pi, pi]")

    @property
    def area(self) -> float:
        return self.length * self.width

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.length, self.width,
                         self.height, self.yaw, self.score, self.class_id],
                        dtype=np.float64)


def normalize_box(t: NormTransform, b: OrientedBox) -> OrientedBox:
    c, s = t.cos, t.sin
    dx, dy = b.cx - t.center[0], b.cy - t.center[1]
    return replace(b, cx=c * dx + s * dy, cy=-s * dx + c * dy, yaw=wrap_angle(b.yaw - t.theta))


def denormalize_box(t: NormTransform, b: OrientedBox) -> OrientedBox:
    c, s = t.cos, t.sin
    return replace(b, cx=c * b.cx - s * b.cy + t.center[0], cy=s * b.cx + c * b.cy + t.center[1],
                   yaw=wrap_angle(b.yaw + t.theta))


BOX_YAW_COLUMN = 6


def normalize_boxes(t: NormTransform, arr) -> np.ndarray:
    """Array form of :func:`normalize_box` for rows laid out as ``OrientedBox.as_array``."""
    out = normalize_point(t, arr)
    out[..., BOX_YAW_COLUMN] = wrap_angles(out[..., BOX_YAW_COLUMN] - t.theta)
    return out


def denormalize_boxes(t: NormTransform, arr) -> np.ndarray:
    out = denormalize_point(t, arr)
    out[..., BOX_YAW_COLUMN] = wrap_angles(out[..., BOX_YAW_COLUMN] + t.theta)
    return out


def rotate_box(b: OrientedBox, angle: float) -> OrientedBox:
    """Rotate a box about the LiDAR origin."""
    x, y = rotate_xy((b.cx, b.cy), angle)
    return replace(b, cx=float(x), cy=float(y), yaw=wrap_angle(b.yaw + angle))


def rot90_box(b: OrientedBox, quarter_turns: int) -> OrientedBox:
    x, y = rot90_xy((b.cx, b.cy), quarter_turns)
    return replace(b, cx=float(x), cy=float(y),
                   yaw=wrap_angle(b.yaw + (quarter_turns % 4) * math.pi / 2))
