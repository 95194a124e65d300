"""Weakly supervised text-conditioned localization.

Trains a saliency network from image-caption pairs alone (no boxes) and
runs three inference modes on top of a pluggable vision-language backend:
single-object localization (wsol), phrase grounding (wsg), and fully
automatic open-world detection (wwbl).
"""

from .core import (
    BackendUnavailable,
    BoundingBox,
    CheckpointError,
    Detection,
    DetectionSet,
    DimensionMismatch,
    GroundingAnnotation,
    InvalidPhrase,
    NonFiniteLoss,
    iou,
    nms,
    pointing_hit,
)

__version__ = "0.1.0"

__all__ = [
    "BackendUnavailable",
    "BoundingBox",
    "CheckpointError",
    "Detection",
    "DetectionSet",
    "DimensionMismatch",
    "GroundingAnnotation",
    "InvalidPhrase",
    "NonFiniteLoss",
    "iou",
    "nms",
    "pointing_hit",
]
