"""Saliency networks: image-only (single-object) and text-conditioned.

The text-conditioned variant encodes the image to a stride-16 feature
map, scores every location against the text embedding by normalized dot
product, weights the features by that similarity map, and decodes with
three x2 upsampling blocks followed by a bilinear resize back to the
input resolution. The image-only variant is a plain U-Net with five
upsampling levels and skip connections.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import CheckpointError, DimensionMismatch

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    variant: str = "multimodal"  # "wsol" or "multimodal"
    encoder: str = "small"
    feature_dim: int = 256
    input_size: int = 96
    decoder_blocks: int = 3

    def __post_init__(self):
        if self.variant not in ("wsol", "multimodal"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.decoder_blocks < 1:
            raise ValueError("decoder_blocks must be >= 1")


def condition(features: torch.Tensor, text_embedding: torch.Tensor) -> torch.Tensor:
    """Similarity map between feature locations and a text embedding.

    Each location's channel vector is normalized to unit length and
    dotted with the (unit-norm) text embedding, so values lie in
    [-1, 1]. Accepts (B, C, h, w) or (C, h, w) features and (B, C) or
    (C,) embeddings.
    """
    squeeze = features.ndim == 3
    if squeeze:
        features = features.unsqueeze(0)
    if text_embedding.ndim == 1:
        text_embedding = text_embedding.unsqueeze(0).expand(features.shape[0], -1)
    if text_embedding.shape[1] != features.shape[1]:
        raise DimensionMismatch(
            f"feature channels {features.shape[1]} != embedding dim {text_embedding.shape[1]}"
        )
    normalized = features / features.norm(dim=1, keepdim=True).clamp_min(1e-12)
    sim = (normalized * text_embedding[:, :, None, None]).sum(dim=1, keepdim=True)
    return sim[0] if squeeze else sim


class _ConvBlock(nn.Module):
    """Two 3x3 convolutions (zero padding 1); batch norm after the last
    one, before the final activation. Intermediate activation is ReLU."""

    def __init__(self, in_ch: int, out_ch: int, final_activation: str = "relu"):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.bn = nn.BatchNorm2d(out_ch)
        self.final_activation = final_activation
        # The first convolution feeds a plain ReLU with no normalization
        # in front; the large early training transient can push all its
        # pre-activations negative at once, permanently severing the
        # spatial pathway. A positive bias gives every unit an aliveness
        # margin through that transient.
        nn.init.constant_(self.conv1.bias, 0.2)
        if final_activation == "sigmoid":
            # Start masks around 0.6 rather than 0.5: the matching losses
            # have vanishing pixel gradients on all-dark masked images, so
            # an optimistic start keeps them in their active regime.
            nn.init.constant_(self.bn.bias, 0.5)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = self.bn(self.conv2(x))
        if self.final_activation == "sigmoid":
            return torch.sigmoid(x)
        return F.relu(x)


class _SmallEncoder(nn.Module):
    """Four stride-2 stages: output is feature_dim x ceil(H/16) x ceil(W/16)."""

    def __init__(self, feature_dim: int):
        super().__init__()
        widths = [16, 32, 64, feature_dim]
        layers = []
        in_ch = 3
        for w in widths:
            layers += [
                nn.Conv2d(in_ch, w, 3, stride=2, padding=1),
                nn.BatchNorm2d(w),
                # Leaky so early high-pressure updates cannot permanently
                # kill feature channels (dead features starve the
                # text-conditioning path for good).
                nn.LeakyReLU(0.1, inplace=True),
            ]
            in_ch = w
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class GroundingNet(nn.Module):
    """Saliency network g. Forward maps an image (and, for the
    multimodal variant, a text embedding) to a mask in (0, 1) at the
    input resolution."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        if config.encoder != "small":
            raise ValueError(
                f"unknown encoder {config.encoder!r}; this build ships 'small'"
            )
        if config.variant == "multimodal":
            self.encoder = _SmallEncoder(config.feature_dim)
            widths = [config.feature_dim]
            for _ in range(config.decoder_blocks - 1):
                widths.append(max(widths[-1] // 4, 16))
            blocks = []
            for i in range(config.decoder_blocks):
                out_ch = 1 if i == config.decoder_blocks - 1 else widths[i + 1]
                act = "sigmoid" if i == config.decoder_blocks - 1 else "relu"
                blocks.append(_ConvBlock(widths[i], out_ch, act))
            self.decoder = nn.ModuleList(blocks)
        else:
            widths = [16, 32, 64, 128, 128]
            self.down_blocks = nn.ModuleList()
            in_ch = 3
            for w in widths:
                self.down_blocks.append(_ConvBlock(in_ch, w))
                in_ch = w
            self.bottleneck = _ConvBlock(widths[-1], widths[-1])
            self.up_blocks = nn.ModuleList()
            skip_widths = widths[::-1]
            up_in = widths[-1]
            for i, skip_w in enumerate(skip_widths):
                out_ch = 1 if i == len(skip_widths) - 1 else max(skip_w // 2, 8)
                act = "sigmoid" if i == len(skip_widths) - 1 else "relu"
                self.up_blocks.append(_ConvBlock(up_in + skip_w, out_ch, act))
                up_in = out_ch

    def forward(
        self, image: torch.Tensor, text_embedding: torch.Tensor | None = None
    ) -> torch.Tensor:
        """image: (B, 3, H, W) or (3, H, W); returns mask of matching
        batch shape, (B, 1, H, W) or (H, W), values in (0, 1)."""
        squeeze = image.ndim == 3
        if squeeze:
            image = image.unsqueeze(0)
        if image.shape[1] != 3:
            raise DimensionMismatch(f"expected 3-channel input, got {image.shape}")
        size = image.shape[2:]
        if self.config.variant == "multimodal":
            if text_embedding is None:
                raise DimensionMismatch("multimodal variant requires a text embedding")
            if not isinstance(text_embedding, torch.Tensor):
                text_embedding = torch.from_numpy(np.asarray(text_embedding))
            text_embedding = text_embedding.to(image.dtype)
            features = self.encoder(image)
            sim = condition(features, text_embedding)
            x = features * sim
            for block in self.decoder:
                x = F.interpolate(
                    x, scale_factor=2, mode="bilinear", align_corners=False
                )
                x = block(x)
            mask = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        else:
            skips = []
            x = image
            for block in self.down_blocks:
                x = block(x)
                skips.append(x)
                x = F.max_pool2d(x, 2, ceil_mode=True)
            x = self.bottleneck(x)
            for block, skip in zip(self.up_blocks, skips[::-1]):
                x = F.interpolate(
                    x, size=skip.shape[2:], mode="bilinear", align_corners=False
                )
                x = block(torch.cat([x, skip], dim=1))
            mask = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        # Sigmoid output followed by bilinear interpolation stays in (0, 1).
        if squeeze:
            return mask[0, 0]
        return mask


def predict_mask(
    net: GroundingNet,
    image: np.ndarray,
    text_embedding: np.ndarray | None = None,
) -> np.ndarray:
    """Inference helper: (H, W, 3) numpy image to (H, W) float mask."""
    net.eval()
    tensor = torch.from_numpy(
        np.ascontiguousarray(image.transpose(2, 0, 1))
    ).float()
    emb = None
    if text_embedding is not None:
        emb = torch.from_numpy(np.asarray(text_embedding)).float()
    with torch.no_grad():
        mask = net(tensor, emb)
    return mask.numpy().astype(np.float64)


def save_checkpoint(path, net: GroundingNet, extra: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "net_config": asdict(net.config),
        "state_dict": net.state_dict(),
    }
    if extra:
        overlap = set(extra) & set(payload)
        if overlap:
            raise ValueError(f"extra keys collide with checkpoint fields: {overlap}")
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[GroundingNet, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint produced by this package")
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {payload['format_version']} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    config = NetConfig(**payload["net_config"])
    net = GroundingNet(config)
    net.load_state_dict(payload["state_dict"])
    extra = {
        k: v
        for k, v in payload.items()
        if k not in ("format_version", "net_config", "state_dict")
    }
    return net, extra
