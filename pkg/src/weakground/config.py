"""Configuration tree: defaults, YAML loading, validation, overrides.

Every tunable of the package appears here with its shipped default.
Unknown keys are rejected so typos fail loudly instead of silently
running with defaults.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .backends import build_backend
from .cluster import ClusterConfig
from .core import WeakgroundError
from .losses import LossWeights
from .mask2box import ExtractionConfig
from .net import NetConfig
from .pipeline import WWbLConfig
from .proposals import ProposalConfig
from .trainer import TrainConfig


class ConfigError(WeakgroundError):
    pass


DEFAULTS: dict = {
    "backend": {
        "kind": "mock",
        "embed_dim": 256,
        "match_resolution": 64,
        "mock_seed": 0,
        "mock_vocabulary": None,
        "checkpoint": None,
        "caption_checkpoint": None,
    },
    "net": {
        "variant": "multimodal",
        "encoder": "small",
        "feature_dim": 256,
        "input_size": 96,
        "decoder_blocks": 3,
    },
    "train": {
        "task": "wsg",
        "batch_size": None,
        "lr": 0.0003,
        "momentum": 0.9,
        "weight_decay": 0.0001,
        "epochs": 100,
        "flip_prob": 0.5,
        "resize": 256,
        "crop": 224,
        "wsg_input": 299,
        "seed": 0,
    },
    "loss": {
        "lambda1": 1.0,
        "lambda2": 1.0,
        "lambda3": 4.0,
        "lambda4": 1.0,
    },
    "extract": {
        "wsol_threshold": 0.1,
        "wsg_threshold": 0.5,
        "nms_iou": 0.3,
        "energy_keep_ratio": 0.5,
    },
    "proposals": {
        "initial_segmentation_scale": 100.0,
        "min_component_size": 25,
        "similarity_weights": [1.0, 1.0, 1.0, 1.0],
        "max_proposals": 100,
        "min_box_side": 20,
    },
    "cluster": {
        "threshold": 0.85,
        "min_size": 2,
    },
    "pipeline": {
        "mode": "selective_search",
        "max_iterations": 5,
        "accept_similarity": 0.6,
    },
}


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    """Merged configuration: defaults, then the YAML file, then
    ``section.key=value`` override strings."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config file {path} must hold a mapping at top level")
        _merge(cfg, user, prefix="")
    for item in overrides or []:
        _apply_override(cfg, item)
    return cfg


def _merge(base: dict, update: dict, prefix: str) -> None:
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path} must be a section")
            _merge(base[key], value, prefix=f"{path}.")
        else:
            base[key] = value


def _apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    dotted, raw = item.split("=", 1)
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    node[keys[-1]] = yaml.safe_load(raw)


def make_net_config(cfg: dict) -> NetConfig:
    return NetConfig(**cfg["net"])


def make_train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def make_loss_weights(cfg: dict) -> LossWeights:
    return LossWeights(**cfg["loss"])


def make_extraction_config(cfg: dict) -> ExtractionConfig:
    return ExtractionConfig(**cfg["extract"])


def make_proposal_config(cfg: dict) -> ProposalConfig:
    section = dict(cfg["proposals"])
    section["similarity_weights"] = tuple(section["similarity_weights"])
    return ProposalConfig(**section)


def make_cluster_config(cfg: dict) -> ClusterConfig:
    return ClusterConfig(
        similarity_threshold=cfg["cluster"]["threshold"],
        min_cluster_size=cfg["cluster"]["min_size"],
    )


def make_wwbl_config(cfg: dict) -> WWbLConfig:
    return WWbLConfig(
        mode=cfg["pipeline"]["mode"],
        max_iterations=cfg["pipeline"]["max_iterations"],
        accept_similarity=cfg["pipeline"]["accept_similarity"],
        extraction=make_extraction_config(cfg),
        proposals=make_proposal_config(cfg),
        cluster=make_cluster_config(cfg),
    )


def make_backend(cfg: dict):
    return build_backend(cfg["backend"])
