"""Weakly supervised training over (image, caption) pairs.

The data interface is pairs only: samples carry an image and its
captions, never boxes, so localization supervision cannot leak in.
Relevancy heatmaps are fetched once per (image, caption) from the
frozen backend, cached, and geometrically transformed alongside the
augmented image.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backends.base import VLBackend, resize_chw
from .core import NonFiniteLoss, require_phrase, validate_image
from .losses import LossWeights, loss_breakdown
from .net import GroundingNet, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    task: str = "wsg"  # "wsol" or "wsg"
    batch_size: int | None = None  # defaults: 48 for wsol, 32 for wsg
    lr: float = 0.0003
    momentum: float = 0.9
    weight_decay: float = 0.0001
    epochs: int = 100
    flip_prob: float = 0.5
    resize: int = 256  # wsol pre-crop size
    crop: int = 224  # wsol input size
    wsg_input: int = 299
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("wsol", "wsg"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")

    @property
    def effective_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 48 if self.task == "wsol" else 32

    @property
    def input_size(self) -> int:
        return self.crop if self.task == "wsol" else self.wsg_input


@dataclass
class PairSample:
    """One training record: an image and the captions describing it."""

    image_id: str
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    captions: list[str]

    def __post_init__(self):
        validate_image(self.image)
        if not self.captions:
            raise ValueError(f"sample {self.image_id} has no captions")
        for c in self.captions:
            require_phrase(c)


def load_pair_dataset(annotation_path: str | Path) -> list[PairSample]:
    """Read (image, caption) pairs from a line-delimited annotation file.

    Only the image path and caption fields are touched; region entries
    are intentionally never parsed here.
    """
    from PIL import Image

    annotation_path = Path(annotation_path)
    root = annotation_path.parent
    samples = []
    with open(annotation_path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid record: {exc}") from exc
            image_path = root / record["image"]
            arr = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float32)
            captions = record.get("captions") or [record["caption"]]
            samples.append(
                PairSample(
                    image_id=Path(record["image"]).stem,
                    image=arr / 255.0,
                    captions=list(captions),
                )
            )
    return samples


def _resize_image(image: np.ndarray, size: int) -> np.ndarray:
    tensor = torch.from_numpy(
        np.ascontiguousarray(image.transpose(2, 0, 1))
    ).double()
    out = resize_chw(tensor, size)
    return out.numpy().transpose(1, 2, 0)


def augment(
    image: np.ndarray, cfg: TrainConfig, rng: np.random.Generator
) -> np.ndarray:
    """Training augmentation: resize (plus random crop for wsol) and a
    horizontal flip with the configured probability."""
    out, _ = _augment_tracked(image, cfg, rng)
    return out


def _augment_tracked(image, cfg, rng):
    """Like augment, but also returns the geometry needed to transform
    the cached relevancy map identically: (crop_x, crop_y, flipped)."""
    if cfg.task == "wsol":
        resized = _resize_image(image, cfg.resize)
        max_off = cfg.resize - cfg.crop
        ox = int(rng.integers(0, max_off + 1)) if max_off > 0 else 0
        oy = int(rng.integers(0, max_off + 1)) if max_off > 0 else 0
        out = resized[oy : oy + cfg.crop, ox : ox + cfg.crop]
    else:
        out = _resize_image(image, cfg.wsg_input)
        ox = oy = 0
    flipped = bool(rng.random() < cfg.flip_prob)
    if flipped:
        out = out[:, ::-1]
    return np.ascontiguousarray(out), (ox, oy, flipped)


class RelevancyCache:
    """Relevancy maps keyed by (image_id, caption); the backend is
    frozen, so one computation per pair is exact, not approximate."""

    def __init__(self, backend: VLBackend, cache_dir: str | Path | None = None):
        self.backend = backend
        self._memory: dict[tuple[str, str], np.ndarray] = {}
        self._dir = Path(cache_dir) if cache_dir else None
        if self._dir:
            self._dir.mkdir(parents=True, exist_ok=True)

    def get(self, image_id: str, image: np.ndarray, caption: str) -> np.ndarray:
        key = (image_id, caption)
        hit = self._memory.get(key)
        if hit is not None:
            return hit
        if self._dir:
            path = self._dir / self._file_name(key)
            if path.exists():
                value = np.load(path)["relevancy"]
                self._memory[key] = value
                return value
        value = self.backend.relevancy(image, caption)
        self._memory[key] = value
        if self._dir:
            np.savez_compressed(self._dir / self._file_name(key), relevancy=value)
        return value

    @staticmethod
    def _file_name(key) -> str:
        import hashlib

        digest = hashlib.sha256("\x1f".join(key).encode("utf-8")).hexdigest()[:24]
        return f"relevancy_{digest}.npz"


def _transform_relevancy(rel, geometry, base_resize, crop, out_size):
    """Apply the sample's crop/flip to a cached relevancy map, then
    resize to the training resolution."""
    ox, oy, flipped = geometry
    out = rel
    if crop is not None and base_resize != crop:
        scale = rel.shape[0] / base_resize
        x0 = int(round(ox * scale))
        y0 = int(round(oy * scale))
        side = max(1, int(round(crop * scale)))
        out = out[y0 : y0 + side, x0 : x0 + side]
    if flipped:
        out = out[:, ::-1]
    tensor = torch.from_numpy(np.ascontiguousarray(out)).double()
    return resize_chw(tensor.unsqueeze(0), out_size)[0].numpy()


@dataclass
class TrainState:
    """Checkpointable snapshot: network plus bookkeeping."""

    net: GroundingNet
    config: TrainConfig
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)
    checkpoint_path: Path | None = None


def train_step(
    batch: list[tuple[torch.Tensor, str, np.ndarray]],
    net: GroundingNet,
    weights: LossWeights,
    backend: VLBackend,
    optimizer: torch.optim.Optimizer,
) -> tuple[float, dict[str, float]]:
    """One SGD update on a batch of (image tensor, caption, relevancy).

    Returns the batch loss and mean per-term values; raises
    NonFiniteLoss on NaN or infinity.
    """
    net.train()
    images = torch.stack([item[0] for item in batch])
    if net.config.variant == "multimodal":
        embeddings = torch.stack(
            [torch.from_numpy(backend.encode_text(item[1])).float() for item in batch]
        )
        masks = net(images, embeddings)
    else:
        masks = net(images)
    total = images.new_zeros(())
    part_sums: dict[str, float] = {}
    for i, (image, caption, rel) in enumerate(batch):
        term, parts = loss_breakdown(
            image, masks[i, 0], caption, rel, weights, backend
        )
        total = total + term
        for name, v in parts.items():
            part_sums[name] = part_sums.get(name, 0.0) + v
    total = total / len(batch)
    value = float(total.detach())
    if not math.isfinite(value):
        raise NonFiniteLoss(
            f"loss became {value} on batch of {len(batch)} "
            f"(captions: {[c for _, c, _ in batch]})"
        )
    optimizer.zero_grad()
    if total.requires_grad:
        total.backward()
        optimizer.step()
    return value, {k: v / len(batch) for k, v in part_sums.items()}


def fit(
    dataset: list[PairSample],
    cfg: TrainConfig,
    net: GroundingNet,
    backend: VLBackend,
    weights: LossWeights = LossWeights(),
    out_dir: str | Path | None = None,
    cache_dir: str | Path | None = None,
    log=None,
) -> TrainState:
    """Full training loop: epochs x batches of augmented pairs, one
    checkpoint per epoch when out_dir is given. Reproducible per seed."""
    if not dataset:
        raise ValueError("dataset is empty")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    optimizer = torch.optim.SGD(
        net.parameters(),
        lr=cfg.lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )
    cache = RelevancyCache(backend, cache_dir)
    state = TrainState(net=net, config=cfg)
    out_path = Path(out_dir) if out_dir else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)

    base_resize = cfg.resize if cfg.task == "wsol" else cfg.wsg_input
    crop = cfg.crop if cfg.task == "wsol" else None
    batch_size = cfg.effective_batch_size

    log_path = out_path / "training_log.jsonl" if out_path else None
    if log_path:
        log_path.write_text("")

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        epoch_parts: dict[str, list[float]] = {}
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            batch = []
            for idx in chunk:
                sample = dataset[idx]
                caption = sample.captions[int(rng.integers(len(sample.captions)))]
                augmented, geometry = _augment_tracked(sample.image, cfg, rng)
                rel = cache.get(
                    sample.image_id,
                    _resize_image(sample.image, base_resize),
                    caption,
                )
                rel = _transform_relevancy(
                    rel, geometry, base_resize, crop, cfg.input_size
                )
                image_t = torch.from_numpy(augmented.transpose(2, 0, 1)).float()
                batch.append((image_t, caption, rel))
            value, parts = train_step(batch, net, weights, backend, optimizer)
            epoch_losses.append(value)
            for name, v in parts.items():
                epoch_parts.setdefault(name, []).append(v)
        mean_loss = float(np.mean(epoch_losses))
        state.epoch = epoch
        state.loss_history.append(mean_loss)
        if log:
            log(epoch, mean_loss)
        if log_path:
            entry = {"epoch": epoch, "loss": mean_loss}
            entry.update(
                {name: float(np.mean(vs)) for name, vs in sorted(epoch_parts.items())}
            )
            with open(log_path, "a") as fh:
                fh.write(json.dumps(entry) + "\n")
        if out_path:
            ckpt = out_path / f"epoch_{epoch}.ckpt"
            save_checkpoint(
                ckpt,
                net,
                extra={
                    "train_config": asdict(cfg),
                    "epoch": epoch,
                    "loss_history": list(state.loss_history),
                },
            )
            state.checkpoint_path = ckpt
    return state
