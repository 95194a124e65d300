"""Inference modes and the evaluation harness.

Three ways to localize:
  * wsol   - image only, one box for the main object
  * wsg    - image + phrase, a mask and scored boxes for that phrase
  * wwbl   - image only, open world: proposals are captioned, captions
             clustered, and the grounding net localizes every cluster
             (or, in the iterative variant, objects are found and erased
             one at a time until the scene caption diverges).

Evaluation matches predictions to ground truth per task and reports the
pointing-game and box (IoU >= 0.5) accuracies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends.base import VLBackend
from .cluster import ClusterConfig, cluster_captions
from .core import (
    BoundingBox,
    Detection,
    DetectionSet,
    GroundingAnnotation,
    iou,
    pointing_hit,
    require_phrase,
    validate_image,
)
from .mask2box import ExtractionConfig, extract_wsg_boxes, extract_wsol_box
from .net import GroundingNet, predict_mask
from .proposals import ProposalConfig, selective_search

BOX_HIT_IOU = 0.5


@dataclass(frozen=True)
class WWbLConfig:
    mode: str = "selective_search"  # or "iterative"
    max_iterations: int = 5
    accept_similarity: float = 0.6
    extraction: ExtractionConfig = ExtractionConfig()
    proposals: ProposalConfig = ProposalConfig()
    cluster: ClusterConfig = ClusterConfig()

    def __post_init__(self):
        if self.mode not in ("selective_search", "iterative"):
            raise ValueError(f"unknown wwbl mode {self.mode!r}")
        if not 0.0 < self.accept_similarity < 1.0:
            raise ValueError("accept_similarity must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class WsolPrediction:
    image_id: str
    mask: np.ndarray
    box: BoundingBox


@dataclass
class WsgPrediction:
    """Per-query grounding output for one image."""

    image_id: str
    queries: list[str] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)
    boxes: list[list[tuple[BoundingBox, float]]] = field(default_factory=list)


@dataclass
class WwblPrediction:
    """Detections plus the forward mask behind each one, kept so the
    pointing metric can be evaluated on the matched prediction."""

    detection_set: DetectionSet
    masks: list[np.ndarray] = field(default_factory=list)

    @property
    def image_id(self) -> str:
        return self.detection_set.image_id


def infer_wsol(
    image: np.ndarray,
    net: GroundingNet,
    cfg: ExtractionConfig = ExtractionConfig(),
    image_id: str = "",
) -> WsolPrediction:
    validate_image(image)
    mask = predict_mask(net, image)
    return WsolPrediction(
        image_id=image_id, mask=mask, box=extract_wsol_box(mask, cfg)
    )


def infer_wsg(
    image: np.ndarray,
    phrase: str,
    net: GroundingNet,
    backend: VLBackend,
    cfg: ExtractionConfig = ExtractionConfig(),
) -> tuple[np.ndarray, list[tuple[BoundingBox, float]]]:
    """Localization mask plus scored boxes for one phrase."""
    phrase = require_phrase(phrase)
    validate_image(image)
    mask = predict_mask(net, image, backend.encode_text(phrase))
    return mask, extract_wsg_boxes(mask, cfg)


def infer_wwbl_ss(
    image: np.ndarray,
    net: GroundingNet,
    backend: VLBackend,
    cfg: WWbLConfig = WWbLConfig(),
    image_id: str = "",
) -> WwblPrediction:
    """Open-world detection via proposals, captions, and clustering."""
    validate_image(image)
    regions = selective_search(image, cfg.proposals)
    captions = [backend.caption(r.crop) for r in regions]
    embeddings = [backend.encode_text(c) for c in captions]
    clusters = cluster_captions(captions, embeddings, cfg.cluster)

    result = WwblPrediction(detection_set=DetectionSet(image_id=image_id))
    for cluster in clusters:
        mask = predict_mask(net, image, backend.encode_text(cluster.representative))
        for box, score in extract_wsg_boxes(mask, cfg.extraction):
            result.detection_set.detections.append(
                Detection(box=box, phrase=cluster.representative, score=score)
            )
            result.masks.append(mask)
    return result


def infer_wwbl_iter(
    image: np.ndarray,
    net: GroundingNet,
    backend: VLBackend,
    cfg: WWbLConfig = WWbLConfig(),
    image_id: str = "",
) -> WwblPrediction:
    """Open-world detection by repeated find-and-erase.

    Caption the scene, localize that caption, crop and re-caption the
    found region; keep it only while the region caption stays similar
    to the original scene caption, then erase the region and continue.
    """
    validate_image(image)
    scene_caption = backend.caption(image)
    working = image.copy()
    result = WwblPrediction(detection_set=DetectionSet(image_id=image_id))
    current = scene_caption
    extraction = ExtractionConfig(
        wsol_threshold=cfg.extraction.wsg_threshold,
        wsg_threshold=cfg.extraction.wsg_threshold,
        nms_iou=cfg.extraction.nms_iou,
        energy_keep_ratio=cfg.extraction.energy_keep_ratio,
    )
    for _ in range(cfg.max_iterations):
        mask = predict_mask(net, working, backend.encode_text(current))
        box = extract_wsol_box(mask, extraction)
        patch = working[box.y : box.y2, box.x : box.x2]
        patch_caption = backend.caption(patch)
        similarity = backend.text_similarity(patch_caption, scene_caption)
        if similarity < cfg.accept_similarity:
            break
        score = float(np.clip(mask[box.y : box.y2, box.x : box.x2].mean(), 0.0, 1.0))
        result.detection_set.detections.append(
            Detection(box=box, phrase=patch_caption, score=score)
        )
        result.masks.append(mask)
        working = working.copy()
        working[box.y : box.y2, box.x : box.x2] = 0.0
        current = backend.caption(working)
    return result


@dataclass
class EvalReport:
    pointing_accuracy: float
    box_accuracy: float
    total: int
    pointing_hits: int
    box_hits: int
    per_image: list[dict] = field(default_factory=list)


def evaluate(
    predictions,
    annotations: list[GroundingAnnotation],
    backend: VLBackend | None,
    task: str,
) -> EvalReport:
    """Score predictions against ground truth.

    wwbl: every ground-truth (phrase, box) is matched to the detection
    whose caption embedding is closest to the phrase embedding; pointing
    uses the matched detection's mask, box accuracy its box. wsg: one
    query per distinct annotated phrase; the query's own mask and top
    box are scored (a hit on any of the phrase's boxes counts). wsol:
    the single predicted box and mask against any annotated box.
    Missing predictions count as misses.
    """
    if task not in ("wsol", "wsg", "wwbl"):
        raise ValueError(f"unknown task {task!r}")
    by_image = {p.image_id: p for p in predictions}
    total = point_hits = box_hits = 0
    per_image = []
    for ann in annotations:
        pred = by_image.get(ann.image_id)
        if task == "wwbl":
            t, p, b, rec = _eval_wwbl(pred, ann, backend)
        elif task == "wsg":
            t, p, b, rec = _eval_wsg(pred, ann)
        else:
            t, p, b, rec = _eval_wsol(pred, ann)
        total += t
        point_hits += p
        box_hits += b
        per_image.append({"image_id": ann.image_id, **rec})
    if total == 0:
        raise ValueError("no ground-truth regions to evaluate")
    return EvalReport(
        pointing_accuracy=point_hits / total,
        box_accuracy=box_hits / total,
        total=total,
        pointing_hits=point_hits,
        box_hits=box_hits,
        per_image=per_image,
    )


def _eval_wwbl(pred: WwblPrediction | None, ann, backend):
    total = len(ann.regions)
    if pred is None or not pred.detection_set.detections:
        return total, 0, 0, {"matched": [], "missing": True}
    detections = pred.detection_set.detections
    phrase_embeddings = {}
    for det in detections:
        if det.phrase not in phrase_embeddings:
            phrase_embeddings[det.phrase] = backend.encode_text(det.phrase)
    point = box_h = 0
    matched = []
    for phrase, gt_box in ann.regions:
        gt_emb = backend.encode_text(phrase)
        sims = [float(np.dot(phrase_embeddings[d.phrase], gt_emb)) for d in detections]
        best = int(np.argmax(sims))
        det = detections[best]
        mask = pred.masks[best] if best < len(pred.masks) else None
        p_hit = mask is not None and pointing_hit(mask, gt_box)
        b_hit = iou(det.box, gt_box) >= BOX_HIT_IOU
        point += p_hit
        box_h += b_hit
        matched.append(
            {
                "phrase": phrase,
                "matched_phrase": det.phrase,
                "similarity": sims[best],
                "point": p_hit,
                "box": b_hit,
            }
        )
    return total, point, box_h, {"matched": matched, "missing": False}


def _eval_wsg(pred: WsgPrediction | None, ann):
    groups: dict[str, list[BoundingBox]] = {}
    for phrase, gt_box in ann.regions:
        groups.setdefault(phrase, []).append(gt_box)
    total = len(groups)
    if pred is None:
        return total, 0, 0, {"queries": [], "missing": True}
    lookup = {q: i for i, q in enumerate(pred.queries)}
    point = box_h = 0
    records = []
    for phrase, gt_boxes in groups.items():
        idx = lookup.get(phrase)
        if idx is None:
            records.append({"phrase": phrase, "point": False, "box": False})
            continue
        mask = pred.masks[idx]
        p_hit = mask is not None and any(pointing_hit(mask, gb) for gb in gt_boxes)
        boxes = pred.boxes[idx]
        b_hit = bool(boxes) and any(
            iou(boxes[0][0], gb) >= BOX_HIT_IOU for gb in gt_boxes
        )
        point += p_hit
        box_h += b_hit
        records.append({"phrase": phrase, "point": p_hit, "box": b_hit})
    return total, point, box_h, {"queries": records, "missing": False}


def _eval_wsol(pred: WsolPrediction | None, ann):
    total = 1
    if pred is None or not ann.regions:
        return total, 0, 0, {"missing": True}
    gt_boxes = [b for _, b in ann.regions]
    p_hit = any(pointing_hit(pred.mask, gb) for gb in gt_boxes)
    b_hit = any(iou(pred.box, gb) >= BOX_HIT_IOU for gb in gt_boxes)
    return total, int(p_hit), int(b_hit), {"point": p_hit, "box": b_hit}
