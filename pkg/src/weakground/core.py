"""Shared domain types and box geometry (IoU, NMS, pointing test).

Conventions used across the package:
  * images are float arrays of shape (H, W, 3) with values in [0, 1]
  * saliency / relevancy maps are float arrays of shape (H, W) in [0, 1]
  * boxes are (x, y, w, h) in integer pixel coordinates, top-left origin
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class WeakgroundError(Exception):
    """Base class for errors raised by this package."""


class DimensionMismatch(WeakgroundError):
    """Shapes of two arrays that must agree do not."""


class InvalidPhrase(WeakgroundError):
    """A phrase is empty after whitespace trimming."""


class BackendUnavailable(WeakgroundError):
    """A vision-language backend could not be constructed or loaded."""


class NonFiniteLoss(WeakgroundError):
    """Training produced a NaN or infinite loss."""


class CheckpointError(WeakgroundError):
    """A checkpoint file is missing, malformed, or incompatible."""


def require_phrase(text: str) -> str:
    """Validate and normalize a phrase: must be non-empty after trimming."""
    stripped = text.strip()
    if not stripped:
        raise InvalidPhrase("phrase is empty")
    return stripped


def validate_image(image: np.ndarray) -> np.ndarray:
    """Check the (H, W, 3) in [0, 1] image convention."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionMismatch(f"expected (H, W, 3) image, got {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise DimensionMismatch(f"degenerate image shape {image.shape}")
    if float(image.min()) < -1e-6 or float(image.max()) > 1 + 1e-6:
        raise ValueError("image values must lie in [0, 1]")
    return image


def validate_mask(mask: np.ndarray) -> np.ndarray:
    """Check the (H, W) in [0, 1] mask convention."""
    if mask.ndim != 2:
        raise DimensionMismatch(f"expected (H, W) mask, got {mask.shape}")
    if float(mask.min()) < -1e-6 or float(mask.max()) > 1 + 1e-6:
        raise ValueError("mask values must lie in [0, 1]")
    return mask


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner (x, y) plus extent (w, h)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive extent, got {self}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def x2(self) -> int:
        """One past the rightmost pixel column."""
        return self.x + self.w

    @property
    def y2(self) -> int:
        """One past the bottom pixel row."""
        return self.y + self.h

    def contains_point(self, row: int, col: int) -> bool:
        return self.y <= row < self.y2 and self.x <= col < self.x2

    def clipped(self, height: int, width: int) -> "BoundingBox":
        """Clip the box to image bounds; raises if nothing remains."""
        x1 = max(0, self.x)
        y1 = max(0, self.y)
        x2 = min(width, self.x2)
        y2 = min(height, self.y2)
        if x2 <= x1 or y2 <= y1:
            raise ValueError(f"box {self} lies outside a {height}x{width} image")
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Detection:
    """A localized region with the phrase that describes it."""

    box: BoundingBox
    phrase: str
    score: float

    def __post_init__(self):
        require_phrase(self.phrase)
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass
class DetectionSet:
    """All detections produced for one image. Empty is legal."""

    image_id: str
    detections: list[Detection] = field(default_factory=list)


@dataclass
class GroundingAnnotation:
    """Ground truth for one image: (phrase, box) region pairs."""

    image_id: str
    regions: list[tuple[str, BoundingBox]] = field(default_factory=list)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def nms(
    boxes: list[tuple[BoundingBox, float]], iou_threshold: float
) -> list[tuple[BoundingBox, float]]:
    """Greedy non-maximum suppression.

    Boxes are visited in descending score order (ties broken by larger
    area, then input order); a box is kept iff its IoU with every box
    already kept is strictly below the threshold. Output preserves the
    kept order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    order = sorted(
        range(len(boxes)),
        key=lambda i: (-boxes[i][1], -boxes[i][0].area, i),
    )
    kept: list[tuple[BoundingBox, float]] = []
    for i in order:
        box, score = boxes[i]
        if all(iou(box, k) < iou_threshold for k, _ in kept):
            kept.append((box, score))
    return kept


def pointing_hit(mask: np.ndarray, gt: BoundingBox) -> bool:
    """True iff the argmax pixel of the mask falls inside the box.

    Ties resolve to the row-major first occurrence of the maximum.
    """
    validate_mask(mask)
    row, col = np.unravel_index(int(np.argmax(mask)), mask.shape)
    return gt.contains_point(int(row), int(col))
