"""Interface to the frozen vision-language models.

The rest of the package only ever talks to a ``VLBackend``: a text
encoder, an image-text matching score, a per-phrase relevancy heatmap,
and an image captioner. Two implementations exist: a deterministic
synthetic color-blob world for desk-scale work, and an adapter over
real pretrained checkpoints.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str  # "pretrained" or "mock"
    embed_dim: int
    match_resolution: int

    def __post_init__(self):
        if self.kind not in ("pretrained", "mock"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.embed_dim < 8:
            raise ValueError(f"embed_dim must be >= 8, got {self.embed_dim}")
        if self.match_resolution < 32:
            raise ValueError(
                f"match_resolution must be >= 32, got {self.match_resolution}"
            )


class VLBackend(ABC):
    """Frozen image-text matcher, text encoder, and captioner.

    Images are either numpy arrays of shape (H, W, 3) or torch tensors
    of shape (3, H, W), both with values in [0, 1]. ``match_score``
    preserves torch gradients when handed a tensor; everything else is
    inference-only.
    """

    descriptor: BackendDescriptor

    @abstractmethod
    def encode_text(self, phrase: str) -> np.ndarray:
        """Unit-norm embedding of shape (embed_dim,)."""

    @abstractmethod
    def match_score(self, image, phrase: str):
        """Cosine similarity between image and phrase, in [-1, 1].

        Returns a float for numpy input and a differentiable scalar
        tensor for torch input.
        """

    @abstractmethod
    def relevancy(self, image, phrase: str) -> np.ndarray:
        """Heatmap of phrase-relevant regions, (R, R) in [0, 1] where R
        is the match resolution."""

    @abstractmethod
    def caption(self, image) -> str:
        """A non-empty description of the image."""

    def text_similarity(self, a: str, b: str) -> float:
        """Cosine similarity between two phrase embeddings."""
        va = self.encode_text(a)
        vb = self.encode_text(b)
        return float(np.dot(va, vb))


def image_to_tensor(image, dtype=torch.float64) -> torch.Tensor:
    """Accept (H, W, 3) numpy or (3, H, W) torch; return (3, H, W) torch."""
    if isinstance(image, torch.Tensor):
        if image.ndim != 3 or image.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) tensor, got {tuple(image.shape)}")
        return image.to(dtype)
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).to(dtype)


def resize_chw(tensor: torch.Tensor, size: int | tuple[int, int]) -> torch.Tensor:
    """Bilinear resize of a (C, H, W) tensor; differentiable."""
    if isinstance(size, int):
        size = (size, size)
    return torch.nn.functional.interpolate(
        tensor.unsqueeze(0), size=size, mode="bilinear", align_corners=False
    ).squeeze(0)
