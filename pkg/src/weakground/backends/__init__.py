"""Vision-language backends: the synthetic mock world and the adapter
over real pretrained checkpoints."""

from __future__ import annotations

from ..core import BackendUnavailable
from .base import BackendDescriptor, VLBackend
from .mock import MockBackend, MockWorldSpec, find_blobs

__all__ = [
    "BackendDescriptor",
    "BackendUnavailable",
    "MockBackend",
    "MockWorldSpec",
    "VLBackend",
    "build_backend",
    "find_blobs",
]


def build_backend(cfg: dict) -> VLBackend:
    """Construct a backend from a ``backend`` config section."""
    kind = cfg.get("kind", "mock")
    if kind == "mock":
        spec_kwargs = {}
        if cfg.get("mock_vocabulary"):
            vocab = cfg["mock_vocabulary"]
            spec_kwargs["colors"] = tuple(
                (name, tuple(rgb)) for name, rgb in vocab["colors"].items()
            )
            if "shapes" in vocab:
                spec_kwargs["shapes"] = tuple(vocab["shapes"])
        spec = MockWorldSpec(seed=int(cfg.get("mock_seed", 0)), **spec_kwargs)
        return MockBackend(
            spec=spec,
            embed_dim=int(cfg.get("embed_dim", 256)),
            match_resolution=int(cfg.get("match_resolution", 64)),
        )
    if kind == "pretrained":
        checkpoint = cfg.get("checkpoint")
        if not checkpoint:
            raise BackendUnavailable("backend.checkpoint is required for kind=pretrained")
        from .pretrained import PretrainedBackend

        return PretrainedBackend(
            checkpoint=checkpoint,
            caption_checkpoint=cfg.get("caption_checkpoint"),
            match_resolution=int(cfg.get("match_resolution", 224)),
        )
    raise ValueError(f"unknown backend kind {kind!r}")
