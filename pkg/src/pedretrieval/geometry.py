"""Head, upper-body and lower-body boxes from four body keypoints.

Coordinates are image pixels with the origin at the top-left corner and
``y`` growing downwards.  Box corners are kept as floats; round only when
cutting pixels out of an image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBox, InvalidKeypoints

REFERENCE_HEIGHT = 512
REFERENCE_ALPHA = 15.0


def default_alpha(height: float) -> float:
    """Overlap margin scaled from 15 px at a 512-pixel-high image."""
    return REFERENCE_ALPHA * float(height) / REFERENCE_HEIGHT


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not all(np.isfinite((self.x0, self.y0, self.x1, self.y1))):
            raise InvalidKeypoints("box corners must be finite")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise InvalidKeypoints(f"box corners out of order: {self}")

    @property
    def upper_left(self) -> tuple[float, float]:
        return (self.x0, self.y0)

    @property
    def bottom_right(self) -> tuple[float, float]:
        return (self.x1, self.y1)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def scaled(self, s: float) -> "Box":
        return Box(self.x0 * s, self.y0 * s, self.x1 * s, self.y1 * s)


@dataclass(frozen=True)
class KeypointSet:
    upper_head: tuple[float, float]
    neck: tuple[float, float]
    left_hip: tuple[float, float]
    right_hip: tuple[float, float]
    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise InvalidKeypoints("image size must be positive")
        pts = np.array([self.upper_head, self.neck, self.left_hip, self.right_hip], dtype=float)
        if pts.shape != (4, 2) or not np.all(np.isfinite(pts)):
            raise InvalidKeypoints("keypoints must be four finite (x, y) pairs")

    def clamped(self) -> "KeypointSet":
        """Copy with every keypoint clipped into the image frame."""

        def clip(p):
            return (
                float(min(max(p[0], 0.0), self.width - 1)),
                float(min(max(p[1], 0.0), self.height - 1)),
            )

        return KeypointSet(
            clip(self.upper_head), clip(self.neck), clip(self.left_hip), clip(self.right_hip),
            self.height, self.width,
        )

    def scaled(self, s: float) -> "KeypointSet":
        def sc(p):
            return (p[0] * s, p[1] * s)

        return KeypointSet(
            sc(self.upper_head), sc(self.neck), sc(self.left_hip), sc(self.right_hip),
            self.height * s, self.width * s,
        )


@dataclass(frozen=True)
class PartBoxes:
    head: Box
    upper_body: Box
    lower_body: Box
    alpha: float


def clamp_box(b: Box, height: float, width: float) -> Box:
    """Clip ``b`` to ``[0, W-1] x [0, H-1]``; raise :class:`EmptyBox` if nothing is left."""
    xmax, ymax = width - 1, height - 1
    x0 = min(max(b.x0, 0.0), xmax)
    x1 = min(max(b.x1, 0.0), xmax)
    y0 = min(max(b.y0, 0.0), ymax)
    y1 = min(max(b.y1, 0.0), ymax)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise EmptyBox(f"box {b.as_tuple()} has no area inside a {width}x{height} frame")
    return Box(x0, y0, x1, y1)


def head_box(k: KeypointSet, alpha: float, clamp: bool = True) -> Box:
    (x1, y1), (x2, y2) = k.upper_head, k.neck
    if not y2 > y1:
        raise InvalidKeypoints(f"neck (y={y2}) must lie below the upper head (y={y1})")
    x_c = (x1 + x2) / 2
    w = y2 - y1 + 2 * alpha
    box = Box(x_c - w / 2, y1 - alpha, x_c + w / 2, y2 + alpha)
    return clamp_box(box, k.height, k.width) if clamp else box


def body_boxes(k: KeypointSet, alpha: float, clamp: bool = True) -> tuple[Box, Box]:
    """Upper- and lower-body boxes spanning the full image width.

    The lower-body box always ends at the bottom image row because foot
    keypoints are unreliable.
    """
    y2 = k.neck[1]
    y_c = (k.left_hip[1] + k.right_hip[1]) / 2
    if not (y2 < y_c < k.height):
        raise InvalidKeypoints(f"hip midpoint y={y_c} must lie between neck y={y2} and image height {k.height}")
    right, bottom = k.width - 1, k.height - 1
    upper = Box(0.0, y2 - 2 * alpha, right, y_c + 2 * alpha)
    lower = Box(0.0, y_c - 2 * alpha, right, bottom)
    if clamp:
        upper = clamp_box(upper, k.height, k.width)
        lower = clamp_box(lower, k.height, k.width)
    return upper, lower


def part_boxes(k: KeypointSet, alpha: float | None = None, clamp: bool = True) -> PartBoxes:
    if alpha is None:
        alpha = default_alpha(k.height)
    if alpha < 0:
        raise InvalidKeypoints("alpha must be non-negative")
    upper, lower = body_boxes(k, alpha, clamp)
    return PartBoxes(head_box(k, alpha, clamp), upper, lower, alpha)
