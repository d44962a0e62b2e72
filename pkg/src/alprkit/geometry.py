"""Bounding-box arithmetic shared by every pipeline stage.

Boxes are axis-aligned rectangles in pixel coordinates, stored as the
top-left corner plus width and height.  Coordinates are continuous;
rounding to integer pixels happens only at crop time (:func:`rasterize`),
so margin, aspect and padding adjustments can be chained without
compounding rounding error.

All functions are pure and safe for unrestricted parallel use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle: (x, y) top-left corner, w x h extent."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def aspect(self) -> float:
        """Width over height."""
        return self.w / self.h


@dataclass(frozen=True)
class FrameDims:
    """Width and height of an image or patch, in pixels."""

    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"frame dims must be positive, got {self.width}x{self.height}")

    @property
    def box(self) -> BBox:
        """The whole frame as a box anchored at the origin."""
        return BBox(0.0, 0.0, self.width, self.height)


def intersect(a: BBox, b: BBox) -> BBox | None:
    """Intersection rectangle of two boxes, or None when disjoint."""
    x1 = max(a.x, b.x)
    y1 = max(a.y, b.y)
    x2 = min(a.x2, b.x2)
    y2 = min(a.y2, b.y2)
    if x2 <= x1 or y2 <= y1:
        return None
    return BBox(x1, y1, x2 - x1, y2 - y1)


def intersection_area(a: BBox, b: BBox) -> float:
    inter = intersect(a, b)
    return inter.area if inter is not None else 0.0


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint, 1 when equal."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def clip_to_frame(b: BBox, frame: FrameDims) -> BBox:
    """Clamp all four edges to the frame.

    Raises ValueError if the box lies entirely outside the frame (the
    clamped rectangle would be empty).
    """
    x1 = min(max(b.x, 0.0), frame.width)
    y1 = min(max(b.y, 0.0), frame.height)
    x2 = min(max(b.x2, 0.0), frame.width)
    y2 = min(max(b.y2, 0.0), frame.height)
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"box {b} lies outside frame {frame.width}x{frame.height}")
    # Keep untouched extents bit-exact instead of recomputing x2 - x1.
    w = b.w if (x1 == b.x and x2 == b.x2) else x2 - x1
    h = b.h if (y1 == b.y and y2 == b.y2) else y2 - y1
    if w == b.w and h == b.h and x1 == b.x and y1 == b.y:
        return b
    return BBox(x1, y1, w, h)


def expand_margin(b: BBox, margin: float, frame: FrameDims) -> BBox:
    """Grow each side by ``margin`` times the box's own width/height, then clip.

    The margin is a per-side fraction: the left and right edges each move
    outward by margin*w, the top and bottom by margin*h.
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    dx = margin * b.w
    dy = margin * b.h
    return clip_to_frame(BBox(b.x - dx, b.y - dy, b.w + 2 * dx, b.h + 2 * dy), frame)


def enlarge_to_aspect(b: BBox, target_w_over_h: float, frame: FrameDims) -> BBox:
    """Widen a box symmetrically about its center until w/h reaches the target.

    Horizontal-only: boxes already at or above the target ratio are
    returned unchanged.  The result is clipped to the frame, so the exact
    ratio may be lost at frame edges.
    """
    if target_w_over_h <= 0:
        raise ValueError(f"target ratio must be positive, got {target_w_over_h}")
    if b.w / b.h >= target_w_over_h:
        return b
    new_w = target_w_over_h * b.h
    cx = b.x + b.w / 2.0
    return clip_to_frame(BBox(cx - new_w / 2.0, b.y, new_w, b.h), frame)


def pad_pixels(b: BBox, pad: float, frame: FrameDims) -> BBox:
    """Move every edge outward by a fixed number of pixels, then clip."""
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    return clip_to_frame(BBox(b.x - pad, b.y - pad, b.w + 2 * pad, b.h + 2 * pad), frame)


def shift(b: BBox, dx: float, dy: float) -> BBox:
    """Translate a box."""
    return BBox(b.x + dx, b.y + dy, b.w, b.h)


def contains(outer: BBox, inner: BBox, eps: float = 1e-9) -> bool:
    """True when ``inner`` lies fully within ``outer`` (edge contact allowed)."""
    return (
        inner.x >= outer.x - eps
        and inner.y >= outer.y - eps
        and inner.x2 <= outer.x2 + eps
        and inner.y2 <= outer.y2 + eps
    )


def _round_half_away(v: float) -> int:
    if v >= 0:
        return math.floor(v + 0.5)
    return math.ceil(v - 0.5)


def rasterize(b: BBox) -> tuple[int, int, int, int]:
    """Integer crop rectangle (x, y, w, h), rounding half away from zero.

    Edges are rounded independently; degenerate results are widened to a
    minimum side of one pixel.
    """
    x1 = _round_half_away(b.x)
    y1 = _round_half_away(b.y)
    x2 = _round_half_away(b.x2)
    y2 = _round_half_away(b.y2)
    return (x1, y1, max(1, x2 - x1), max(1, y2 - y1))
