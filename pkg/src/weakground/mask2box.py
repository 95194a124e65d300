"""Convert continuous saliency masks into scored bounding boxes.

Single-object extraction binarizes at a low threshold and keeps the box
of the largest contour; multi-object extraction binarizes at 0.5, scores
one box per outer contour, then applies NMS and an energy-ratio filter.
Contours come from raster-scan border following on the binary mask
(8-connected foreground).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BoundingBox, nms, validate_mask


@dataclass(frozen=True)
class ExtractionConfig:
    wsol_threshold: float = 0.1
    wsg_threshold: float = 0.5
    nms_iou: float = 0.3
    energy_keep_ratio: float = 0.5

    def __post_init__(self):
        for name in ("wsol_threshold", "wsg_threshold", "nms_iou"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 < self.energy_keep_ratio <= 1.0:
            raise ValueError(
                f"energy_keep_ratio must lie in (0, 1], got {self.energy_keep_ratio}"
            )


@dataclass
class Contour:
    """A closed chain of 8-connected boundary pixels as (row, col) pairs."""

    points: list[tuple[int, int]]
    is_hole: bool

    def bounding_box(self) -> BoundingBox:
        rows = [p[0] for p in self.points]
        cols = [p[1] for p in self.points]
        return BoundingBox(
            x=min(cols),
            y=min(rows),
            w=max(cols) - min(cols) + 1,
            h=max(rows) - min(rows) + 1,
        )

    def enclosed_area(self) -> float:
        """Pixel count enclosed by the chain, via the shoelace formula
        with a lattice-point correction (interior + boundary pixels)."""
        pts = self.points
        n = len(pts)
        if n < 3:
            return float(len(set(pts)))
        twice_area = 0
        for i in range(n):
            r1, c1 = pts[i]
            r2, c2 = pts[(i + 1) % n]
            twice_area += c1 * r2 - c2 * r1
        return abs(twice_area) / 2.0 + len(set(pts)) / 2.0 + 1.0


def binarize(mask: np.ndarray, threshold: float) -> np.ndarray:
    """Foreground iff value >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    validate_mask(mask)
    return mask >= threshold


# Clockwise 8-neighborhood starting from "east", as (drow, dcol).
_NEIGHBORS = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]
_DIR_INDEX = {d: i for i, d in enumerate(_NEIGHBORS)}


def trace_contours(binary: np.ndarray) -> list[Contour]:
    """Raster-scan border following over 8-connected foreground.

    Returns one outer contour per connected component plus one contour
    per hole. Points are (row, col) in traversal order; single-pixel
    components yield a one-point chain.
    """
    if binary.ndim != 2:
        raise ValueError(f"expected 2-D binary mask, got shape {binary.shape}")
    h, w = binary.shape
    # Pad with background so border starts are detected at image edges.
    f = np.zeros((h + 2, w + 2), dtype=np.int32)
    f[1:-1, 1:-1] = binary.astype(np.int32)

    contours: list[Contour] = []
    nbd = 1
    for i in range(1, h + 1):
        for j in range(1, w + 1):
            if f[i, j] == 0:
                continue
            if f[i, j] == 1 and f[i, j - 1] == 0:
                is_hole = False
                start_neighbor = (i, j - 1)
            elif f[i, j] >= 1 and f[i, j + 1] == 0:
                is_hole = True
                start_neighbor = (i, j + 1)
            else:
                continue
            nbd += 1
            points = _follow_border(f, (i, j), start_neighbor, nbd)
            contours.append(
                Contour(points=[(r - 1, c - 1) for r, c in points], is_hole=is_hole)
            )
    return contours


def _follow_border(f, start, start_neighbor, nbd):
    """Walk one border clockwise, marking visited pixels in f."""
    i, j = start
    # Find the first foreground pixel clockwise from the start neighbor.
    d0 = _DIR_INDEX[(start_neighbor[0] - i, start_neighbor[1] - j)]
    first = None
    for k in range(1, 9):
        dr, dc = _NEIGHBORS[(d0 + k) % 8]
        if f[i + dr, j + dc] != 0:
            first = (i + dr, j + dc)
            break
    if first is None:
        # Isolated pixel.
        f[i, j] = -nbd
        return [(i, j)]

    points = [(i, j)]
    prev = first
    cur = start
    while True:
        ci, cj = cur
        # Scan counterclockwise from the previous pixel, skipping it.
        dp = _DIR_INDEX[(prev[0] - ci, prev[1] - cj)]
        examined_east_zero = False
        nxt = None
        for k in range(1, 9):
            d = (dp - k) % 8
            dr, dc = _NEIGHBORS[d]
            ni, nj = ci + dr, cj + dc
            if f[ni, nj] != 0:
                nxt = (ni, nj)
                break
            if d == 0:
                examined_east_zero = True
        # Marking policy: a border pixel whose east neighbor was examined
        # and found background closes against the outside; mark negative
        # so the same hole border is not started twice.
        if examined_east_zero:
            f[ci, cj] = -nbd
        elif f[ci, cj] == 1:
            f[ci, cj] = nbd
        if nxt == start and cur == first:
            break
        prev = cur
        cur = nxt
        points.append(cur)
    return points


def outer_contours(binary: np.ndarray) -> list[Contour]:
    return [c for c in trace_contours(binary) if not c.is_hole]


def extract_wsol_box(
    mask: np.ndarray, cfg: ExtractionConfig = ExtractionConfig()
) -> BoundingBox:
    """Box of the largest-area contour after binarizing at the low
    threshold; falls back to the full-image box when nothing survives."""
    binary = binarize(mask, cfg.wsol_threshold)
    outers = outer_contours(binary)
    if not outers:
        return BoundingBox(0, 0, mask.shape[1], mask.shape[0])
    largest = max(outers, key=lambda c: c.enclosed_area())
    return largest.bounding_box()


def extract_wsg_boxes(
    mask: np.ndarray, cfg: ExtractionConfig = ExtractionConfig()
) -> list[tuple[BoundingBox, float]]:
    """One scored box per outer contour at the 0.5 threshold.

    The score is the mean of the raw (pre-binarization) mask inside the
    box. Overlapping boxes are suppressed at ``cfg.nms_iou``; boxes
    scoring below ``energy_keep_ratio`` times the maximum are dropped.
    """
    binary = binarize(mask, cfg.wsg_threshold)
    candidates = []
    for contour in outer_contours(binary):
        box = contour.bounding_box()
        score = float(mask[box.y : box.y2, box.x : box.x2].mean())
        candidates.append((box, score))
    if not candidates:
        return []
    kept = nms(candidates, cfg.nms_iou)
    max_score = kept[0][1]
    return [(b, s) for b, s in kept if s >= cfg.energy_keep_ratio * max_score]
