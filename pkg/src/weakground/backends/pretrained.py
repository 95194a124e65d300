"""Adapter over real pretrained image-text matching and captioning models.

Loads a contrastive image-text model (dual encoder) for matching and,
optionally, a captioning model, through the ``transformers`` library.
Relevancy comes from gradient-weighted attention on the vision encoder,
normalized to [0, 1]; anything fancier belongs to the model provider.
Everything raises BackendUnavailable when weights cannot be loaded, so
callers can fall back to the mock world.
"""

from __future__ import annotations

import numpy as np
import torch

from ..core import BackendUnavailable, require_phrase
from .base import BackendDescriptor, VLBackend, image_to_tensor, resize_chw

_IMAGE_MEAN = (0.48145466, 0.4578275, 0.40821073)
_IMAGE_STD = (0.26862954, 0.26130258, 0.27577711)


class PretrainedBackend(VLBackend):
    def __init__(
        self,
        checkpoint: str,
        caption_checkpoint: str | None = None,
        match_resolution: int = 224,
    ):
        try:
            from transformers import AutoProcessor, CLIPModel
        except ImportError as exc:
            raise BackendUnavailable(f"transformers not installed: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(checkpoint)
            self._processor = AutoProcessor.from_pretrained(checkpoint)
        except Exception as exc:
            raise BackendUnavailable(
                f"could not load matching model from {checkpoint!r}: {exc}"
            ) from exc
        self._model.eval()
        for p in self._model.parameters():
            p.requires_grad_(False)

        self._captioner = None
        self._caption_processor = None
        if caption_checkpoint:
            try:
                from transformers import BlipForConditionalGeneration, BlipProcessor

                self._captioner = BlipForConditionalGeneration.from_pretrained(
                    caption_checkpoint
                )
                self._caption_processor = BlipProcessor.from_pretrained(
                    caption_checkpoint
                )
                self._captioner.eval()
            except Exception as exc:
                raise BackendUnavailable(
                    f"could not load caption model from {caption_checkpoint!r}: {exc}"
                ) from exc

        self.descriptor = BackendDescriptor(
            kind="pretrained",
            embed_dim=int(self._model.config.projection_dim),
            match_resolution=match_resolution,
        )
        mean = torch.tensor(_IMAGE_MEAN).view(3, 1, 1)
        std = torch.tensor(_IMAGE_STD).view(3, 1, 1)
        self._norm = (mean, std)

    def encode_text(self, phrase: str) -> np.ndarray:
        phrase = require_phrase(phrase)
        inputs = self._processor(
            text=[phrase], return_tensors="pt", padding=True, truncation=True
        )
        with torch.no_grad():
            feats = self._model.get_text_features(**inputs)[0]
        feats = feats / feats.norm()
        return feats.numpy().astype(np.float64)

    def _image_features(self, tensor: torch.Tensor) -> torch.Tensor:
        mean, std = self._norm
        resized = resize_chw(tensor.float(), self.descriptor.match_resolution)
        normalized = (resized - mean) / std
        feats = self._model.get_image_features(pixel_values=normalized.unsqueeze(0))[0]
        return feats / feats.norm()

    def match_score(self, image, phrase: str):
        text = torch.from_numpy(self.encode_text(phrase)).float()
        if isinstance(image, torch.Tensor):
            tensor = image_to_tensor(image, dtype=image.dtype)
            return self._image_features(tensor) @ text
        with torch.no_grad():
            return float(self._image_features(image_to_tensor(image)) @ text)

    def relevancy(self, image, phrase: str) -> np.ndarray:
        """Gradient-weighted mean attention of the vision encoder for the
        matching score against the phrase, resized to match resolution."""
        phrase = require_phrase(phrase)
        tensor = image_to_tensor(image).float().requires_grad_(False)
        mean, std = self._norm
        resized = resize_chw(tensor, self.descriptor.match_resolution)
        pixel_values = ((resized - mean) / std).unsqueeze(0)

        outputs = self._model.vision_model(
            pixel_values=pixel_values, output_attentions=True
        )
        pooled = outputs.pooler_output
        feats = self._model.visual_projection(pooled)[0]
        feats = feats / feats.norm()
        text = torch.from_numpy(self.encode_text(phrase)).float()
        score = feats @ text

        attn = outputs.attentions[-1]  # (1, heads, tokens, tokens)
        grads = torch.autograd.grad(score, attn, retain_graph=False)[0]
        weighted = (grads * attn).clamp(min=0).mean(dim=1)[0]  # (tokens, tokens)
        per_patch = weighted[0, 1:]  # cls-token row, patch columns
        side = int(np.sqrt(per_patch.numel()))
        heat = per_patch[: side * side].reshape(1, side, side)
        heat = resize_chw(heat, self.descriptor.match_resolution)[0]
        heat = heat - heat.min()
        if float(heat.max()) > 0:
            heat = heat / heat.max()
        return heat.detach().numpy().astype(np.float64)

    def caption(self, image) -> str:
        if self._captioner is None:
            raise BackendUnavailable("no caption model was configured")
        arr = image
        if isinstance(image, torch.Tensor):
            arr = image.detach().cpu().numpy().transpose(1, 2, 0)
        pil = _to_pil(np.asarray(arr))
        inputs = self._caption_processor(images=pil, return_tensors="pt")
        with torch.no_grad():
            ids = self._captioner.generate(**inputs, max_new_tokens=30, num_beams=1)
        text = self._caption_processor.decode(ids[0], skip_special_tokens=True)
        return text.strip() or "an image"


def _to_pil(arr: np.ndarray):
    from PIL import Image

    return Image.fromarray(
        np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    )
