"""Bottom-up region proposals: graph-based over-segmentation followed
by hierarchical similarity-driven merging.

Segments come from the classic graph-cut criterion (edge weight = color
distance, merge while internal variation allows); merging then combines
adjacent regions by color-histogram, texture-histogram, size, and fill
similarity. Every region ever formed contributes its bounding box as a
candidate. One color space and one scale are used; determinism matters
more here than the diversification ensembles of full-blown proposal
systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.color import rgb2hsv
from skimage.segmentation import felzenszwalb

from .core import BoundingBox, validate_image

_SMOOTH_SIGMA = 0.8
_COLOR_BINS = 25
_ORIENT_BINS = 8
_MAGNITUDE_BINS = 10


@dataclass(frozen=True)
class ProposalConfig:
    initial_segmentation_scale: float = 100.0
    min_component_size: int = 25
    similarity_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    max_proposals: int = 100
    min_box_side: int = 20

    def __post_init__(self):
        if self.max_proposals < 1:
            raise ValueError("max_proposals must be >= 1")
        if self.min_box_side < 1:
            raise ValueError("min_box_side must be >= 1")


@dataclass
class RegionProposal:
    box: BoundingBox
    crop: np.ndarray  # image restricted to box


def oversegment(image: np.ndarray, cfg: ProposalConfig = ProposalConfig()) -> np.ndarray:
    """Label map of the initial segmentation; every pixel gets exactly
    one label and components respect the minimum size."""
    validate_image(image)
    return felzenszwalb(
        image.astype(np.float64),
        scale=cfg.initial_segmentation_scale,
        sigma=_SMOOTH_SIGMA,
        min_size=cfg.min_component_size,
    )


@dataclass
class _Region:
    size: int
    bbox: tuple[int, int, int, int]  # (min_row, min_col, max_row, max_col)
    color_hist: np.ndarray
    texture_hist: np.ndarray
    neighbors: set[int] = field(default_factory=set)
    alive: bool = True

    def box(self) -> BoundingBox:
        r0, c0, r1, c1 = self.bbox
        return BoundingBox(x=c0, y=r0, w=c1 - c0 + 1, h=r1 - r0 + 1)


def _histograms(image, labels, n_regions):
    """Per-region color (HSV) and gradient-orientation histograms."""
    hsv = rgb2hsv(image)
    flat_labels = labels.ravel()

    color = np.zeros((n_regions, 3, _COLOR_BINS))
    for ch in range(3):
        bins = np.minimum(
            (hsv[:, :, ch].ravel() * _COLOR_BINS).astype(int), _COLOR_BINS - 1
        )
        np.add.at(color, (flat_labels, ch, bins), 1.0)

    texture = np.zeros((n_regions, 3, _ORIENT_BINS, _MAGNITUDE_BINS))
    for ch in range(3):
        gy, gx = np.gradient(image[:, :, ch].astype(np.float64))
        orient = (np.arctan2(gy, gx) + np.pi) / (2 * np.pi)  # [0, 1]
        obins = np.minimum((orient.ravel() * _ORIENT_BINS).astype(int), _ORIENT_BINS - 1)
        mag = np.minimum(np.hypot(gx, gy).ravel(), 1.0 - 1e-9)
        mbins = (mag * _MAGNITUDE_BINS).astype(int)
        np.add.at(texture, (flat_labels, ch, obins, mbins), 1.0)

    color = color.reshape(n_regions, -1)
    texture = texture.reshape(n_regions, -1)
    color /= np.maximum(color.sum(axis=1, keepdims=True), 1e-12)
    texture /= np.maximum(texture.sum(axis=1, keepdims=True), 1e-12)
    return color, texture


def _similarity(a: _Region, b: _Region, image_size: int, weights) -> float:
    wc, wt, ws, wf = weights
    s = 0.0
    if wc:
        s += wc * float(np.minimum(a.color_hist, b.color_hist).sum())
    if wt:
        s += wt * float(np.minimum(a.texture_hist, b.texture_hist).sum())
    if ws:
        s += ws * (1.0 - (a.size + b.size) / image_size)
    if wf:
        r0 = min(a.bbox[0], b.bbox[0])
        c0 = min(a.bbox[1], b.bbox[1])
        r1 = max(a.bbox[2], b.bbox[2])
        c1 = max(a.bbox[3], b.bbox[3])
        merged_area = (r1 - r0 + 1) * (c1 - c0 + 1)
        s += wf * (1.0 - (merged_area - a.size - b.size) / image_size)
    return s


def selective_search(
    image: np.ndarray, cfg: ProposalConfig = ProposalConfig()
) -> list[RegionProposal]:
    """Hierarchical greedy merging of the initial segments.

    Proposals are the initial segments (in label order) followed by
    every merged region (in merge order), deduplicated, filtered by
    minimum box side, and truncated to max_proposals.
    """
    validate_image(image)
    labels = oversegment(image, cfg)
    n0 = int(labels.max()) + 1
    h, w = labels.shape
    image_size = h * w

    color, texture = _histograms(image, labels, n0)
    regions: dict[int, _Region] = {}
    for rid in range(n0):
        rows, cols = np.nonzero(labels == rid)
        regions[rid] = _Region(
            size=int(rows.size),
            bbox=(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())),
            color_hist=color[rid],
            texture_hist=texture[rid],
        )

    # Adjacency from horizontally / vertically touching pixels.
    pairs = set()
    lr = labels[:, :-1] != labels[:, 1:]
    for a, b in zip(labels[:, :-1][lr], labels[:, 1:][lr]):
        pairs.add((min(int(a), int(b)), max(int(a), int(b))))
    tb = labels[:-1, :] != labels[1:, :]
    for a, b in zip(labels[:-1, :][tb], labels[1:, :][tb]):
        pairs.add((min(int(a), int(b)), max(int(a), int(b))))
    for a, b in pairs:
        regions[a].neighbors.add(b)
        regions[b].neighbors.add(a)

    sims = {
        (a, b): _similarity(regions[a], regions[b], image_size, cfg.similarity_weights)
        for a, b in pairs
    }

    order: list[int] = list(range(n0))
    next_id = n0
    while sims:
        # Highest similarity wins; ties resolve to the lowest id pair.
        (ra, rb) = min(sims, key=lambda k: (-sims[k], k))
        a, b = regions[ra], regions[rb]
        merged = _Region(
            size=a.size + b.size,
            bbox=(
                min(a.bbox[0], b.bbox[0]),
                min(a.bbox[1], b.bbox[1]),
                max(a.bbox[2], b.bbox[2]),
                max(a.bbox[3], b.bbox[3]),
            ),
            color_hist=(a.color_hist * a.size + b.color_hist * b.size)
            / (a.size + b.size),
            texture_hist=(a.texture_hist * a.size + b.texture_hist * b.size)
            / (a.size + b.size),
            neighbors=(a.neighbors | b.neighbors) - {ra, rb},
        )
        a.alive = False
        b.alive = False
        rid = next_id
        next_id += 1
        regions[rid] = merged
        order.append(rid)
        sims = {k: v for k, v in sims.items() if ra not in k and rb not in k}
        for nb in merged.neighbors:
            regions[nb].neighbors.discard(ra)
            regions[nb].neighbors.discard(rb)
            regions[nb].neighbors.add(rid)
            sims[(min(nb, rid), max(nb, rid))] = _similarity(
                merged, regions[nb], image_size, cfg.similarity_weights
            )

    seen: set[tuple[int, int, int, int]] = set()
    proposals: list[RegionProposal] = []
    for rid in order:
        box = regions[rid].box()
        key = (box.x, box.y, box.w, box.h)
        if key in seen:
            continue
        seen.add(key)
        if box.w < cfg.min_box_side or box.h < cfg.min_box_side:
            continue
        crop = image[box.y : box.y2, box.x : box.x2].copy()
        proposals.append(RegionProposal(box=box, crop=crop))
        if len(proposals) >= cfg.max_proposals:
            break
    return proposals
