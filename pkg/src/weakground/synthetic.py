"""Synthetic scene generation for the color-blob world.

Produces images of 1-3 non-overlapping colored shapes on a dark
textured background, together with captions and exact ground-truth
boxes. The generator owns the truth, so annotation boxes bound their
blobs by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backends.mock import MockWorldSpec
from .core import BoundingBox, GroundingAnnotation

DEFAULT_IMAGE_SIZE = 96
MIN_BLOB_SIDE = 24
MAX_BLOB_SIDE = 40


@dataclass
class SceneObject:
    color: str
    shape: str
    box: BoundingBox


@dataclass
class Scene:
    image_id: str
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    objects: list[SceneObject]

    @property
    def caption(self) -> str:
        return " and ".join(f"a {o.color} {o.shape}" for o in self.objects)

    @property
    def captions(self) -> list[str]:
        """The full-scene caption plus one caption per object."""
        singles = [f"a {o.color} {o.shape}" for o in self.objects]
        if len(singles) == 1:
            return singles
        return [self.caption] + singles

    def annotation(self) -> GroundingAnnotation:
        return GroundingAnnotation(
            image_id=self.image_id,
            regions=[(f"a {o.color} {o.shape}", o.box) for o in self.objects],
        )


def _textured_background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Dark background with low-frequency structure and pixel noise."""
    coarse = rng.uniform(0.0, 1.0, size=(size // 8 + 1, size // 8 + 1))
    ys = np.linspace(0, coarse.shape[0] - 1 - 1e-6, size)
    xs = np.linspace(0, coarse.shape[1] - 1 - 1e-6, size)
    yi, xi = np.floor(ys).astype(int), np.floor(xs).astype(int)
    yf, xf = ys - yi, xs - xi
    smooth = (
        coarse[yi][:, xi] * (1 - yf)[:, None] * (1 - xf)[None, :]
        + coarse[yi + 1][:, xi] * yf[:, None] * (1 - xf)[None, :]
        + coarse[yi][:, xi + 1] * (1 - yf)[:, None] * xf[None, :]
        + coarse[yi + 1][:, xi + 1] * yf[:, None] * xf[None, :]
    )
    base = 0.05 + 0.08 * smooth + rng.uniform(-0.02, 0.02, size=(size, size))
    img = np.repeat(base[:, :, None], 3, axis=2)
    img += rng.uniform(-0.01, 0.01, size=img.shape)
    return np.clip(img, 0.0, 0.3)


def _shape_mask(shape: str, h: int, w: int) -> np.ndarray:
    rows, cols = np.mgrid[0:h, 0:w]
    if shape == "square":
        return np.ones((h, w), dtype=bool)
    if shape == "circle":
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        return ((rows - cy) / (h / 2.0)) ** 2 + ((cols - cx) / (w / 2.0)) ** 2 <= 1.0
    if shape == "triangle":
        # Apex-up isoceles triangle filling the box.
        half_span = (rows + 1) / h * (w / 2.0)
        cx = (w - 1) / 2.0
        return np.abs(cols - cx) <= half_span
    raise ValueError(f"unknown shape {shape!r}")


def generate_scene(
    rng: np.random.Generator,
    image_id: str,
    spec: MockWorldSpec = MockWorldSpec(),
    size: int = DEFAULT_IMAGE_SIZE,
    max_objects: int = 3,
) -> Scene:
    """One scene with 1..max_objects blobs of distinct colors."""
    image = _textured_background(rng, size)
    n_objects = int(rng.integers(1, max_objects + 1))
    color_names = list(spec.color_names)
    palette = dict(spec.colors)
    chosen_colors = rng.choice(color_names, size=n_objects, replace=False)

    objects: list[SceneObject] = []
    occupied: list[BoundingBox] = []
    for color in chosen_colors:
        shape = str(rng.choice(list(spec.shapes)))
        box = _place_box(rng, size, occupied)
        if box is None:
            continue
        occupied.append(box)
        mask = _shape_mask(shape, box.h, box.w)
        rgb = np.array(palette[color], dtype=np.float64)
        jitter = rng.uniform(-0.02, 0.02, size=(box.h, box.w, 3))
        patch = image[box.y : box.y2, box.x : box.x2]
        patch[mask] = np.clip(rgb[None, :] + jitter[mask], 0.0, 1.0)
        if shape != "square":
            box = _tighten(mask, box)
        objects.append(SceneObject(color=str(color), shape=shape, box=box))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Scene(image_id=image_id, image=image, objects=objects)


def _place_box(rng, size, occupied, margin=4, tries=50):
    for _ in range(tries):
        side_w = int(rng.integers(MIN_BLOB_SIDE, MAX_BLOB_SIDE + 1))
        side_h = int(rng.integers(MIN_BLOB_SIDE, MAX_BLOB_SIDE + 1))
        x = int(rng.integers(margin, size - side_w - margin + 1))
        y = int(rng.integers(margin, size - side_h - margin + 1))
        box = BoundingBox(x, y, side_w, side_h)
        grown = BoundingBox(
            max(0, x - margin),
            max(0, y - margin),
            min(size, x + side_w + margin) - max(0, x - margin),
            min(size, y + side_h + margin) - max(0, y - margin),
        )
        if all(_disjoint(grown, o) for o in occupied):
            return box
    return None


def _disjoint(a: BoundingBox, b: BoundingBox) -> bool:
    return a.x >= b.x2 or b.x >= a.x2 or a.y >= b.y2 or b.y >= a.y2


def _tighten(mask: np.ndarray, box: BoundingBox) -> BoundingBox:
    rows, cols = np.nonzero(mask)
    return BoundingBox(
        x=box.x + int(cols.min()),
        y=box.y + int(rows.min()),
        w=int(cols.max() - cols.min()) + 1,
        h=int(rows.max() - rows.min()) + 1,
    )


def generate_scenes(
    count: int,
    seed: int,
    spec: MockWorldSpec = MockWorldSpec(),
    size: int = DEFAULT_IMAGE_SIZE,
    max_objects: int = 3,
    prefix: str = "scene",
) -> list[Scene]:
    return [
        generate_scene(
            np.random.default_rng([seed, i]),
            image_id=f"{prefix}_{i:04d}",
            spec=spec,
            size=size,
            max_objects=max_objects,
        )
        for i in range(count)
    ]


def write_dataset(scenes: list[Scene], out_dir: str | Path) -> Path:
    """Write PNG images plus line-delimited annotation records.

    Record layout: ``{"image": <relative path>, "caption": str,
    "captions": [str, ...], "regions": [{"phrase": str, "box": [x, y, w, h]}]}``.
    Training readers must only touch the caption fields.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for scene in scenes:
        file_name = f"images/{scene.image_id}.png"
        arr = np.clip(np.round(scene.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(out_dir / file_name)
        records.append(
            {
                "image": file_name,
                "caption": scene.caption,
                "captions": scene.captions,
                "regions": [
                    {"phrase": phrase, "box": box.as_list()}
                    for phrase, box in scene.annotation().regions
                ],
            }
        )
    ann_path = out_dir / "annotations.jsonl"
    with open(ann_path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return ann_path
