"""The four weak-supervision loss terms and their weighted combination.

A foreground term rewards high image-text matching of the masked image,
a background term penalizes matching of the complement, a relevancy
term anchors the mask to the backend's relevancy heatmap, and a mean
regularizer keeps masks sparse. The relevancy and regularization terms
are normalized by pixel count so the default weights transfer across
training resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .backends.base import VLBackend, image_to_tensor
from .core import DimensionMismatch


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0  # foreground matching
    lambda2: float = 1.0  # background matching
    lambda3: float = 4.0  # relevancy heatmap
    lambda4: float = 1.0  # mask sparsity

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _as_mask_tensor(mask) -> torch.Tensor:
    if isinstance(mask, torch.Tensor):
        t = mask
    else:
        t = torch.from_numpy(np.asarray(mask, dtype=np.float64))
    if t.ndim != 2:
        raise DimensionMismatch(f"expected (H, W) mask, got {tuple(t.shape)}")
    return t


def _masked_image(image, mask: torch.Tensor) -> torch.Tensor:
    tensor = image_to_tensor(image, dtype=mask.dtype)
    if tensor.shape[1:] != mask.shape:
        raise DimensionMismatch(
            f"mask {tuple(mask.shape)} does not match image {tuple(tensor.shape[1:])}"
        )
    return tensor * mask.unsqueeze(0)


def loss_fore(image, mask, phrase: str, backend: VLBackend):
    """Negated matching score of the mask-selected image region."""
    mask_t = _as_mask_tensor(mask)
    score = backend.match_score(_masked_image(image, mask_t), phrase)
    return -score if isinstance(mask, torch.Tensor) else float(-score)


def loss_back(image, mask, phrase: str, backend: VLBackend):
    """Matching score of the complement region; low when the mask took
    everything the phrase refers to."""
    mask_t = _as_mask_tensor(mask)
    score = backend.match_score(_masked_image(image, 1.0 - mask_t), phrase)
    return score if isinstance(mask, torch.Tensor) else float(score)


def loss_rmap(mask, relevancy):
    """Mean squared difference between mask and relevancy heatmap."""
    mask_t = _as_mask_tensor(mask)
    rel_t = _as_mask_tensor(relevancy).to(mask_t.dtype)
    if mask_t.shape != rel_t.shape:
        raise DimensionMismatch(
            f"mask {tuple(mask_t.shape)} vs relevancy {tuple(rel_t.shape)}"
        )
    value = ((mask_t - rel_t) ** 2).mean()
    return value if isinstance(mask, torch.Tensor) else float(value)


def loss_reg(mask):
    """Mean mask value; pushes toward compact foreground."""
    mask_t = _as_mask_tensor(mask)
    value = mask_t.mean()
    return value if isinstance(mask, torch.Tensor) else float(value)


def loss_breakdown(
    image,
    mask,
    phrase: str,
    relevancy,
    weights: LossWeights,
    backend: VLBackend,
):
    """Weighted total plus the unweighted value of each active term.

    Zero-weight terms are skipped entirely, so ablations pay nothing
    for disabled losses.
    """
    is_tensor = isinstance(mask, torch.Tensor)
    total = mask.sum() * 0.0 if is_tensor else 0.0
    parts: dict[str, float] = {}
    if weights.lambda1:
        term = loss_fore(image, mask, phrase, backend)
        total = total + weights.lambda1 * term
        parts["fore"] = _value(term)
    if weights.lambda2:
        term = loss_back(image, mask, phrase, backend)
        total = total + weights.lambda2 * term
        parts["back"] = _value(term)
    if weights.lambda3:
        term = loss_rmap(mask, relevancy)
        total = total + weights.lambda3 * term
        parts["rmap"] = _value(term)
    if weights.lambda4:
        term = loss_reg(mask)
        total = total + weights.lambda4 * term
        parts["reg"] = _value(term)
    return total, parts


def _value(term) -> float:
    return float(term.detach()) if isinstance(term, torch.Tensor) else float(term)


def loss_total(
    image,
    mask,
    phrase: str,
    relevancy,
    weights: LossWeights,
    backend: VLBackend,
):
    """Weighted combination of all four terms."""
    total, _ = loss_breakdown(image, mask, phrase, relevancy, weights, backend)
    return total if isinstance(mask, torch.Tensor) else float(total)
