"""Command-line entry points.

Commands: ``train``, ``infer``, ``eval``, ``make-synthetic``. Exit
codes: 2 configuration error, 3 data error, 4 non-finite training loss,
5 checkpoint/config incompatibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import (
    ConfigError,
    load_config,
    make_backend,
    make_extraction_config,
    make_loss_weights,
    make_net_config,
    make_train_config,
    make_wwbl_config,
)
from .core import (
    BoundingBox,
    CheckpointError,
    Detection,
    DetectionSet,
    GroundingAnnotation,
    NonFiniteLoss,
)
from .net import GroundingNet, load_checkpoint
from .synthetic import generate_scenes, write_dataset
from .trainer import fit, load_pair_dataset

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NONFINITE = 4
EXIT_CHECKPOINT = 5


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLoss as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weakground",
        description="Weakly supervised text-conditioned localization",
    )
    parser.add_argument("--config", default=None, help="YAML configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config entry, e.g. --set train.epochs=5",
    )
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the grounding network")
    p_train.add_argument("--data", required=True, help="annotations.jsonl of the pair dataset")
    p_train.add_argument("--out", required=True, help="run directory for checkpoints")
    p_train.add_argument("--task", choices=["wsol", "wsg"], default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_infer = sub.add_parser("infer", help="run inference on images")
    p_infer.add_argument("images", nargs="+", help="image files")
    p_infer.add_argument(
        "--mode", required=True, choices=["wsol", "wsg", "wwbl", "wwbl-iter"]
    )
    p_infer.add_argument("--checkpoint", required=True)
    p_infer.add_argument("--prompt", default=None, help="phrase to ground (wsg only)")
    p_infer.add_argument("--out", required=True, help="output detections (.jsonl)")
    p_infer.add_argument("--overlay", default=None, help="directory for box overlays")
    p_infer.add_argument("--save-masks", default=None, help="directory for mask images")
    p_infer.add_argument("--workers", type=int, default=1)
    p_infer.set_defaults(func=cmd_infer)

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument("--pred", required=True, help="predictions .jsonl from infer")
    p_eval.add_argument("--gt", required=True, help="annotations .jsonl")
    p_eval.add_argument("--task", choices=["wsol", "wsg", "wwbl"], default="wwbl")
    p_eval.add_argument("--metric", choices=["point", "box", "both"], default="both")
    p_eval.add_argument("--masks", default=None, help="mask directory from infer")
    p_eval.add_argument("--out", default=None, help="write a JSON report here")
    p_eval.set_defaults(func=cmd_eval)

    p_make = sub.add_parser("make-synthetic", help="generate a synthetic pair dataset")
    p_make.add_argument("--out", required=True)
    p_make.add_argument("--count", type=int, required=True)
    p_make.add_argument("--size", type=int, default=96)
    p_make.set_defaults(func=cmd_make_synthetic)
    return parser


def _load_run_config(args) -> dict:
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
        cfg["backend"]["mock_seed"] = args.seed
    return cfg


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if args.task:
        cfg["train"]["task"] = args.task
    if args.epochs is not None:
        cfg["train"]["epochs"] = args.epochs
    train_cfg = make_train_config(cfg)
    net_cfg = make_net_config(cfg)
    expected_variant = "wsol" if train_cfg.task == "wsol" else "multimodal"
    if net_cfg.variant != expected_variant:
        print(
            f"config error: task {train_cfg.task} needs net.variant="
            f"{expected_variant}, config says {net_cfg.variant}",
            file=sys.stderr,
        )
        return EXIT_CONFIG

    data_path = Path(args.data)
    if not data_path.exists():
        print(f"data error: dataset not found: {data_path}", file=sys.stderr)
        return EXIT_DATA
    try:
        dataset = load_pair_dataset(data_path)
    except (ValueError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if not dataset:
        print(f"data error: dataset at {data_path} is empty", file=sys.stderr)
        return EXIT_DATA

    import torch

    torch.manual_seed(train_cfg.seed)
    net = GroundingNet(net_cfg)
    backend = make_backend(cfg)
    state = fit(
        dataset,
        train_cfg,
        net,
        backend,
        weights=make_loss_weights(cfg),
        out_dir=args.out,
        cache_dir=os.environ.get("WWBL_CACHE_DIR"),
        log=lambda epoch, loss: print(f"epoch {epoch}: loss {loss:.4f}"),
    )
    print(f"checkpoint: {state.checkpoint_path}")
    return 0


def _load_image(path: Path) -> np.ndarray:
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return arr / 255.0


def cmd_infer(args) -> int:
    cfg = _load_run_config(args)
    if args.mode == "wsg" and not args.prompt:
        print("config error: --mode wsg requires --prompt", file=sys.stderr)
        return EXIT_CONFIG
    if args.mode != "wsg" and args.prompt:
        print(f"config error: --mode {args.mode} forbids --prompt", file=sys.stderr)
        return EXIT_CONFIG

    try:
        net, _ = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    needs = "wsol" if args.mode == "wsol" else "multimodal"
    if net.config.variant != needs:
        print(
            f"checkpoint error: mode {args.mode} needs a {needs} net, "
            f"checkpoint holds {net.config.variant}",
            file=sys.stderr,
        )
        return EXIT_CHECKPOINT

    backend = make_backend(cfg)
    extraction = make_extraction_config(cfg)
    wwbl_cfg = make_wwbl_config(cfg)
    mask_dir = Path(args.save_masks) if args.save_masks else None
    overlay_dir = Path(args.overlay) if args.overlay else None
    for d in (mask_dir, overlay_dir):
        if d:
            d.mkdir(parents=True, exist_ok=True)

    image_paths = [Path(p) for p in args.images]
    for image_path in image_paths:
        if not image_path.exists():
            print(f"data error: image not found: {image_path}", file=sys.stderr)
            return EXIT_DATA

    def process(image_path: Path):
        image = _load_image(image_path)
        image_id = image_path.stem
        if args.mode == "wsol":
            out = pl.infer_wsol(image, net, extraction, image_id=image_id)
            detections = [
                Detection(
                    box=out.box,
                    phrase="object",
                    score=float(np.clip(out.mask.mean(), 0.0, 1.0)),
                )
            ]
            masks = [out.mask]
        elif args.mode == "wsg":
            mask, boxes = pl.infer_wsg(image, args.prompt, net, backend, extraction)
            detections = [
                Detection(box=b, phrase=args.prompt, score=s) for b, s in boxes
            ]
            masks = [mask] * len(detections) if detections else [mask]
        else:
            run = pl.infer_wwbl_iter if args.mode == "wwbl-iter" else pl.infer_wwbl_ss
            out = run(image, net, backend, wwbl_cfg, image_id=image_id)
            detections = out.detection_set.detections
            masks = out.masks
        return image, image_id, detections, masks

    if args.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(process, image_paths))
    else:
        results = [process(p) for p in image_paths]

    records = []
    for image, image_id, detections, masks in results:
        records.append(
            {
                "image_id": image_id,
                "detections": [
                    {"phrase": d.phrase, "box": d.box.as_list(), "score": d.score}
                    for d in detections
                ],
            }
        )
        if mask_dir:
            _save_masks(mask_dir, image_id, detections, masks, args.mode)
        if overlay_dir:
            _save_overlay(overlay_dir / f"{image_id}.png", image, detections)

    with open(args.out, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _save_masks(mask_dir, image_id, detections, masks, mode):
    from PIL import Image

    if mode == "wsg" and not detections:
        names = [f"{image_id}_000.png"]
    else:
        names = [f"{image_id}_{i:03d}.png" for i in range(len(masks))]
    for name, mask in zip(names, masks):
        gray = np.clip(np.round(mask * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(gray, mode="L").save(mask_dir / name)


def _save_overlay(path, image, detections):
    from PIL import Image, ImageDraw

    img = Image.fromarray(
        np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    ).convert("RGB")
    draw = ImageDraw.Draw(img)
    for det in detections:
        b = det.box
        draw.rectangle([b.x, b.y, b.x2 - 1, b.y2 - 1], outline=(255, 255, 0), width=1)
        label = f"{det.phrase} {det.score:.2f}"
        draw.text((b.x, max(0, b.y - 10)), label, fill=(255, 255, 0))
    img.save(path)


def _parse_jsonl(path: Path, kind: str):
    entries = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(
                    f"{kind} file {path}, line {line_no}: malformed record ({exc})"
                ) from exc
    return entries


def _record_to_annotation(record) -> GroundingAnnotation:
    image_id = record.get("image_id") or Path(record["image"]).stem
    regions = [
        (r["phrase"], BoundingBox(*r["box"])) for r in record.get("regions", [])
    ]
    return GroundingAnnotation(image_id=image_id, regions=regions)


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    try:
        pred_records = _parse_jsonl(Path(args.pred), "prediction")
        gt_records = _parse_jsonl(Path(args.gt), "ground-truth")
    except (ValueError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA

    annotations = []
    try:
        annotations = [_record_to_annotation(r) for r in gt_records]
    except (KeyError, TypeError, ValueError) as exc:
        print(f"data error: bad ground-truth record: {exc}", file=sys.stderr)
        return EXIT_DATA

    mask_dir = Path(args.masks) if args.masks else None
    if args.metric in ("point", "both") and mask_dir is None:
        print(
            "data error: the pointing metric needs --masks "
            "(run infer with --save-masks)",
            file=sys.stderr,
        )
        return EXIT_DATA

    try:
        predictions = [
            _record_to_prediction(r, args.task, mask_dir) for r in pred_records
        ]
    except (KeyError, TypeError, ValueError) as exc:
        print(f"data error: bad prediction record: {exc}", file=sys.stderr)
        return EXIT_DATA

    backend = make_backend(cfg) if args.task == "wwbl" else None
    report = pl.evaluate(predictions, annotations, backend, args.task)

    parts = []
    if args.metric in ("point", "both"):
        parts.append(f"point: {report.pointing_accuracy * 100.0:.2f}")
    if args.metric in ("box", "both"):
        parts.append(f"box: {report.box_accuracy * 100.0:.2f}")
    print("  ".join(parts))
    if args.out:
        payload = {
            "task": args.task,
            "pointing_accuracy": report.pointing_accuracy,
            "box_accuracy": report.box_accuracy,
            "total": report.total,
            "pointing_hits": report.pointing_hits,
            "box_hits": report.box_hits,
            "per_image": report.per_image,
        }
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
    return 0


def _load_mask(mask_dir, image_id, index):
    from PIL import Image

    if mask_dir is None:
        return None
    path = mask_dir / f"{image_id}_{index:03d}.png"
    if not path.exists():
        return None
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def _record_to_prediction(record, task, mask_dir):
    image_id = record["image_id"]
    dets = record.get("detections", [])
    if task == "wsol":
        if not dets:
            raise ValueError(f"wsol prediction for {image_id} has no detection")
        box = BoundingBox(*dets[0]["box"])
        mask = _load_mask(mask_dir, image_id, 0)
        if mask is None:
            mask = np.zeros((box.y2, box.x2))
        return pl.WsolPrediction(image_id=image_id, mask=mask, box=box)
    if task == "wsg":
        pred = pl.WsgPrediction(image_id=image_id)
        for i, det in enumerate(dets):
            phrase = det["phrase"]
            if phrase in pred.queries:
                idx = pred.queries.index(phrase)
                pred.boxes[idx].append((BoundingBox(*det["box"]), float(det["score"])))
                continue
            pred.queries.append(phrase)
            pred.masks.append(_load_mask(mask_dir, image_id, i))
            pred.boxes.append([(BoundingBox(*det["box"]), float(det["score"]))])
        return pred
    detection_set = DetectionSet(
        image_id=image_id,
        detections=[
            Detection(
                box=BoundingBox(*d["box"]), phrase=d["phrase"], score=float(d["score"])
            )
            for d in dets
        ],
    )
    masks = [_load_mask(mask_dir, image_id, i) for i in range(len(dets))]
    return pl.WwblPrediction(detection_set=detection_set, masks=masks)


def cmd_make_synthetic(args) -> int:
    cfg = _load_run_config(args)
    if args.count < 1:
        print("config error: --count must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else cfg["train"]["seed"]
    scenes = generate_scenes(args.count, seed=seed, size=args.size)
    ann_path = write_dataset(scenes, args.out)
    print(f"wrote {len(scenes)} scenes; annotations at {ann_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
