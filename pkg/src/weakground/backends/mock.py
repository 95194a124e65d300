"""Deterministic synthetic vision-language backend.

The mock world contains colored geometric blobs on dark textured
backgrounds. Text embeds as a weighted bag of seeded random token
vectors; images embed by soft-pooling pixel colors against the
vocabulary colors, which keeps the matching score smooth with respect
to every pixel (required for mask gradients). Captioning and relevancy
analyze the pixels directly with hard color matching, which is fine
because neither sits on a differentiable path.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np
import torch
from skimage.measure import label as label_components

from ..core import require_phrase
from .base import BackendDescriptor, VLBackend, image_to_tensor, resize_chw

DEFAULT_COLORS: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.15, 0.20, 0.85),
    "yellow": (0.85, 0.80, 0.10),
    "magenta": (0.80, 0.15, 0.80),
    "cyan": (0.10, 0.75, 0.80),
}

DEFAULT_SHAPES: tuple[str, ...] = ("square", "circle", "triangle")

# Soft color kernel width (on chroma distance): an exponential kernel,
# not a squared-exponential one, so the pooled evidence keeps a usable
# gradient over the whole mask range - including at a fully masked-out
# image, where a flat-topped kernel would leave training no way back.
CHROMA_SIGMA = 0.25
# Constant bias direction keeping near-empty images away from every phrase.
BACKGROUND_BIAS = 0.06
# Non-vocabulary tokens count less, so shared filler words ("image of a")
# do not dominate phrase similarity.
FILLER_WEIGHT = 0.6
# Hard color-match tolerance for blob detection (euclidean, RGB in [0,1]).
MATCH_TOLERANCE = 0.25
MIN_BLOB_PIXELS = 12

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class MockWorldSpec:
    """Vocabulary of the synthetic world plus the seed that fixes it."""

    colors: tuple[tuple[str, tuple[float, float, float]], ...] = tuple(
        DEFAULT_COLORS.items()
    )
    shapes: tuple[str, ...] = DEFAULT_SHAPES
    seed: int = 0

    def __post_init__(self):
        if not self.colors:
            raise ValueError("vocabulary must contain at least one color")
        triples = [c for _, c in self.colors]
        if len(set(triples)) != len(triples):
            raise ValueError("color triples must be distinct")

    @property
    def color_names(self) -> list[str]:
        return [name for name, _ in self.colors]

    @property
    def color_values(self) -> np.ndarray:
        return np.array([rgb for _, rgb in self.colors], dtype=np.float64)


@dataclass
class Blob:
    """One detected colored region in an image."""

    color: str
    shape: str
    x: int
    y: int
    w: int
    h: int
    pixels: int
    centroid: tuple[float, float]  # (row, col)


def find_blobs(image: np.ndarray, spec: MockWorldSpec) -> list[Blob]:
    """Detect vocabulary-colored regions by nearest-color matching and
    8-connected component labeling. Purely for captioning/relevancy."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    palette = spec.color_values  # (C, 3)
    dist2 = ((img[:, :, None, :] - palette[None, None, :, :]) ** 2).sum(axis=3)
    nearest = dist2.argmin(axis=2)
    matched = dist2.min(axis=2) < MATCH_TOLERANCE**2

    blobs: list[Blob] = []
    for ci, name in enumerate(spec.color_names):
        component_map = label_components(matched & (nearest == ci), connectivity=2)
        for cid in range(1, component_map.max() + 1):
            rows, cols = np.nonzero(component_map == cid)
            if rows.size < MIN_BLOB_PIXELS:
                continue
            y, x = int(rows.min()), int(cols.min())
            h = int(rows.max()) - y + 1
            w = int(cols.max()) - x + 1
            blobs.append(
                Blob(
                    color=name,
                    shape=_classify_shape(rows.size, w, h, spec),
                    x=x,
                    y=y,
                    w=w,
                    h=h,
                    pixels=int(rows.size),
                    centroid=(float(rows.mean()), float(cols.mean())),
                )
            )
    blobs.sort(key=lambda b: (-b.pixels, b.y, b.x))
    return blobs


def _classify_shape(pixel_count: int, w: int, h: int, spec: MockWorldSpec) -> str:
    # Fill ratio of the bounding box separates the rendered primitives:
    # square ~1.0, circle ~0.79, triangle ~0.5.
    fill = pixel_count / (w * h)
    if fill >= 0.88:
        guess = "square"
    elif fill >= 0.62:
        guess = "circle"
    else:
        guess = "triangle"
    return guess if guess in spec.shapes else spec.shapes[0]


class MockBackend(VLBackend):
    """Synthetic backend over the color-blob world.

    Deterministic per (spec, embed_dim): token vectors are seeded by a
    stable hash, so identical construction parameters reproduce
    bit-identical embeddings across processes.
    """

    def __init__(
        self,
        spec: MockWorldSpec = MockWorldSpec(),
        embed_dim: int = 256,
        match_resolution: int = 64,
    ):
        self.spec = spec
        self.descriptor = BackendDescriptor(
            kind="mock", embed_dim=embed_dim, match_resolution=match_resolution
        )
        self._token_cache: dict[str, np.ndarray] = {}
        self._vocab_words = set(spec.color_names) | set(spec.shapes)
        self._palette_t = torch.from_numpy(spec.color_values)  # (C, 3) float64
        self._color_tokens = np.stack(
            [self._token_vector(name) for name in spec.color_names]
        )
        self._background_token = self._token_vector("__background__")

    # -- text side ---------------------------------------------------

    def _token_vector(self, token: str) -> np.ndarray:
        cached = self._token_cache.get(token)
        if cached is not None:
            return cached
        digest = hashlib.sha256(
            f"{self.spec.seed}:{token}".encode("utf-8")
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.descriptor.embed_dim)
        vec /= np.linalg.norm(vec)
        self._token_cache[token] = vec
        return vec

    def encode_text(self, phrase: str) -> np.ndarray:
        phrase = require_phrase(phrase)
        tokens = tokenize(phrase)
        if not tokens:
            # Phrase with no alphanumeric content; embed the raw string.
            tokens = [phrase]
        acc = np.zeros(self.descriptor.embed_dim)
        for token in dict.fromkeys(tokens):  # unique, in first-seen order
            weight = 1.0 if token in self._vocab_words else FILLER_WEIGHT
            acc += weight * self._token_vector(token)
        norm = np.linalg.norm(acc)
        if norm < 1e-12:
            acc = self._token_vector(phrase)
            norm = 1.0
        return acc / norm

    # -- image side ----------------------------------------------------

    def _embed_image(self, tensor: torch.Tensor) -> torch.Tensor:
        """Differentiable (embed_dim,) embedding of a (3, H, W) tensor.

        Evidence for each vocabulary color is a Gaussian kernel over
        chroma (pixel minus its channel mean) with the kernel's value at
        zero chroma subtracted, so achromatic pixels - black, gray
        backgrounds, masked-out regions - contribute exactly nothing.
        """
        resized = resize_chw(tensor, self.descriptor.match_resolution)
        pixels = resized.permute(1, 2, 0).reshape(-1, 3)  # (N, 3)
        chroma = pixels - pixels.mean(dim=1, keepdim=True)
        proto = self._palette_t - self._palette_t.mean(dim=1, keepdim=True)  # (C, 3)
        eps = 1e-12
        dist = (
            ((chroma[:, None, :] - proto[None, :, :]) ** 2).sum(dim=2) + eps
        ).sqrt()
        black = ((proto**2).sum(dim=1) + eps).sqrt()
        affinity = torch.exp(-dist / CHROMA_SIGMA) - torch.exp(
            -black / CHROMA_SIGMA
        )[None, :]
        pooled = affinity.mean(dim=0)  # (C,)
        color_tokens = torch.from_numpy(self._color_tokens)  # (C, D)
        embed = pooled @ color_tokens
        embed = embed + BACKGROUND_BIAS * torch.from_numpy(self._background_token)
        return embed / torch.linalg.norm(embed)

    def match_score(self, image, phrase: str):
        text = torch.from_numpy(self.encode_text(phrase))
        if isinstance(image, torch.Tensor):
            embed = self._embed_image(image_to_tensor(image, dtype=image.dtype))
            return embed @ text.to(embed.dtype)
        tensor = image_to_tensor(image)
        with torch.no_grad():
            return float(self._embed_image(tensor) @ text)

    # -- scene analysis ------------------------------------------------

    def caption(self, image) -> str:
        img = _to_numpy_image(image)
        blobs = find_blobs(img, self.spec)
        if not blobs:
            return "image of a background"
        top = blobs[0]
        return f"image of a {top.color} {top.shape}"

    def relevancy(self, image, phrase: str) -> np.ndarray:
        """Gaussian bump (sigma = blob size / 8) on every blob the phrase
        names; zeros when the phrase names nothing present."""
        phrase = require_phrase(phrase)
        img = _to_numpy_image(image)
        blobs = find_blobs(img, self.spec)
        tokens = set(tokenize(phrase))
        color_words = tokens & set(self.spec.color_names)
        shape_words = tokens & set(self.spec.shapes)
        if color_words:
            named = [b for b in blobs if b.color in color_words]
        elif shape_words:
            named = [b for b in blobs if b.shape in shape_words]
        else:
            named = []

        res = self.descriptor.match_resolution
        out = np.zeros((res, res))
        if not named:
            return out
        sy = res / img.shape[0]
        sx = res / img.shape[1]
        grid_r, grid_c = np.mgrid[0:res, 0:res]
        for blob in named:
            cr = blob.centroid[0] * sy
            cc = blob.centroid[1] * sx
            sigma = max(blob.w * sx, blob.h * sy) / 8.0
            sigma = max(sigma, 0.5)
            bump = np.exp(
                -((grid_r - cr) ** 2 + (grid_c - cc) ** 2) / (2.0 * sigma**2)
            )
            out = np.maximum(out, bump)
        return out / out.max()


def _to_numpy_image(image) -> np.ndarray:
    if isinstance(image, torch.Tensor):
        return image.detach().cpu().numpy().transpose(1, 2, 0)
    return np.asarray(image, dtype=np.float64)
