import json
from pathlib import Path

import numpy as np
import pytest
import torch

from weakground.cli import main
from weakground.config import ConfigError, DEFAULTS, load_config
from weakground.net import GroundingNet, NetConfig, save_checkpoint
from weakground.synthetic import generate_scenes, write_dataset


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    write_dataset(generate_scenes(4, seed=90, size=64), out)
    return out


@pytest.fixture(scope="module")
def multimodal_ckpt(tmp_path_factory):
    torch.manual_seed(0)
    net = GroundingNet(NetConfig(variant="multimodal", feature_dim=64, input_size=64))
    path = tmp_path_factory.mktemp("ckpt") / "mm.ckpt"
    save_checkpoint(path, net)
    return path


@pytest.fixture(scope="module")
def base_args(tmp_path_factory):
    cfg = tmp_path_factory.mktemp("cfg") / "small.yaml"
    cfg.write_text(
        "backend:\n  embed_dim: 64\n"
        "net:\n  feature_dim: 64\n  input_size: 64\n"
        "train:\n  batch_size: 2\n  wsg_input: 64\n  lr: 0.05\n"
    )
    return ["--config", str(cfg)]


class TestConfig:
    def test_defaults_complete(self):
        cfg = load_config()
        assert cfg == DEFAULTS
        assert cfg["loss"]["lambda3"] == 4.0
        assert cfg["extract"]["wsol_threshold"] == 0.1
        assert cfg["cluster"]["threshold"] == 0.85
        assert cfg["pipeline"]["accept_similarity"] == 0.6

    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("train:\n  learning_rate: 0.1\n")
        with pytest.raises(ConfigError, match="train.learning_rate"):
            load_config(bad)

    def test_override_parsing(self):
        cfg = load_config(overrides=["train.epochs=7", "loss.lambda3=0"])
        assert cfg["train"]["epochs"] == 7
        assert cfg["loss"]["lambda3"] == 0

    def test_bad_override(self):
        with pytest.raises(ConfigError):
            load_config(overrides=["no_such.key=1"])

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/config.yaml")


class TestMakeSynthetic:
    def test_writes_dataset(self, tmp_path):
        rc = main(
            ["--seed", "5", "make-synthetic", "--out", str(tmp_path / "d"),
             "--count", "3", "--size", "64"]
        )
        assert rc == 0
        lines = (tmp_path / "d" / "annotations.jsonl").read_text().splitlines()
        assert len(lines) == 3
        record = json.loads(lines[0])
        assert {"image", "caption", "captions", "regions"} <= set(record)

    def test_deterministic_per_seed(self, tmp_path):
        main(["--seed", "5", "make-synthetic", "--out", str(tmp_path / "a"),
              "--count", "2", "--size", "64"])
        main(["--seed", "5", "make-synthetic", "--out", str(tmp_path / "b"),
              "--count", "2", "--size", "64"])
        a = (tmp_path / "a" / "annotations.jsonl").read_bytes()
        b = (tmp_path / "b" / "annotations.jsonl").read_bytes()
        assert a == b

    def test_bad_count(self, tmp_path):
        assert main(["make-synthetic", "--out", str(tmp_path), "--count", "0"]) == 2


class TestTrainCommand:
    def test_missing_dataset_exits_3(self, base_args, tmp_path, capsys):
        rc = main(
            base_args
            + ["train", "--data", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path)]
        )
        assert rc == 3
        assert "nope.jsonl" in capsys.readouterr().err

    def test_task_variant_mismatch_exits_2(self, base_args, dataset_dir, tmp_path):
        rc = main(
            base_args
            + [
                "train", "--task", "wsol",
                "--data", str(dataset_dir / "annotations.jsonl"),
                "--out", str(tmp_path / "run"),
            ]
        )
        assert rc == 2

    def test_smoke_run_writes_checkpoint(self, base_args, dataset_dir, tmp_path):
        rc = main(
            base_args
            + [
                "train", "--epochs", "1",
                "--data", str(dataset_dir / "annotations.jsonl"),
                "--out", str(tmp_path / "run"),
            ]
        )
        assert rc == 0
        assert (tmp_path / "run" / "epoch_1.ckpt").exists()
        assert (tmp_path / "run" / "training_log.jsonl").exists()

    def test_nonfinite_loss_exits_4(self, base_args, dataset_dir, tmp_path, monkeypatch):
        from weakground import cli as cli_module
        from weakground.core import NonFiniteLoss

        def explode(*args, **kwargs):
            raise NonFiniteLoss("loss became nan")

        monkeypatch.setattr(cli_module, "fit", explode)
        rc = main(
            base_args
            + [
                "train", "--epochs", "1",
                "--data", str(dataset_dir / "annotations.jsonl"),
                "--out", str(tmp_path / "run"),
            ]
        )
        assert rc == 4


class TestInferCommand:
    def test_wsg_requires_prompt(self, base_args, multimodal_ckpt, dataset_dir, tmp_path):
        image = str(next((dataset_dir / "images").glob("*.png")))
        rc = main(
            base_args
            + ["infer", image, "--mode", "wsg", "--checkpoint", str(multimodal_ckpt),
               "--out", str(tmp_path / "p.jsonl")]
        )
        assert rc == 2

    def test_wwbl_forbids_prompt(self, base_args, multimodal_ckpt, dataset_dir, tmp_path):
        image = str(next((dataset_dir / "images").glob("*.png")))
        rc = main(
            base_args
            + ["infer", image, "--mode", "wwbl", "--prompt", "a dog",
               "--checkpoint", str(multimodal_ckpt), "--out", str(tmp_path / "p.jsonl")]
        )
        assert rc == 2

    def test_mode_checkpoint_mismatch_exits_5(self, base_args, multimodal_ckpt, dataset_dir, tmp_path):
        image = str(next((dataset_dir / "images").glob("*.png")))
        rc = main(
            base_args
            + ["infer", image, "--mode", "wsol",
               "--checkpoint", str(multimodal_ckpt), "--out", str(tmp_path / "p.jsonl")]
        )
        assert rc == 5

    def test_record_count_matches_images(self, base_args, multimodal_ckpt, dataset_dir, tmp_path):
        images = [str(p) for p in sorted((dataset_dir / "images").glob("*.png"))]
        out = tmp_path / "preds.jsonl"
        rc = main(
            base_args
            + ["infer", *images, "--mode", "wsg", "--prompt", "a red square",
               "--checkpoint", str(multimodal_ckpt), "--out", str(out),
               "--save-masks", str(tmp_path / "masks"),
               "--overlay", str(tmp_path / "ov")]
        )
        assert rc == 0
        records = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(records) == len(images)
        assert list(tmp_path.joinpath("masks").glob("*.png"))
        assert len(list(tmp_path.joinpath("ov").glob("*.png"))) == len(images)


class TestEvalCommand:
    def test_round_trip_and_formatting(self, base_args, dataset_dir, tmp_path, capsys):
        # hand-built predictions: every gt phrase matched with its own box
        gt_path = dataset_dir / "annotations.jsonl"
        preds = []
        mask_dir = tmp_path / "masks"
        mask_dir.mkdir()
        from PIL import Image

        for line in gt_path.read_text().splitlines():
            record = json.loads(line)
            image_id = Path(record["image"]).stem
            detections = []
            for i, region in enumerate(record["regions"]):
                detections.append(
                    {"phrase": region["phrase"], "box": region["box"], "score": 0.9}
                )
                x, y, w, h = region["box"]
                mask = np.zeros((64, 64), dtype=np.uint8)
                mask[y + h // 2, x + w // 2] = 255
                Image.fromarray(mask, mode="L").save(
                    mask_dir / f"{image_id}_{i:03d}.png"
                )
            preds.append({"image_id": image_id, "detections": detections})
        pred_path = tmp_path / "preds.jsonl"
        pred_path.write_text("\n".join(json.dumps(p) for p in preds) + "\n")

        report_path = tmp_path / "report.json"
        rc = main(
            base_args
            + ["eval", "--pred", str(pred_path), "--gt", str(gt_path),
               "--task", "wwbl", "--masks", str(mask_dir),
               "--out", str(report_path)]
        )
        assert rc == 0
        printed = capsys.readouterr().out
        assert "point: 100.00" in printed
        assert "box: 100.00" in printed
        report = json.loads(report_path.read_text())
        assert report["pointing_accuracy"] == 1.0

    def test_malformed_pred_line_reports_number(self, base_args, dataset_dir, tmp_path, capsys):
        pred_path = tmp_path / "broken.jsonl"
        pred_path.write_text('{"image_id": "a", "detections": []}\n{oops\n')
        rc = main(
            base_args
            + ["eval", "--pred", str(pred_path),
               "--gt", str(dataset_dir / "annotations.jsonl"),
               "--task", "wwbl", "--metric", "box"]
        )
        assert rc == 3
        assert "line 2" in capsys.readouterr().err

    def test_point_metric_without_masks_is_data_error(self, base_args, dataset_dir, tmp_path, capsys):
        pred_path = tmp_path / "p.jsonl"
        pred_path.write_text("")
        rc = main(
            base_args
            + ["eval", "--pred", str(pred_path),
               "--gt", str(dataset_dir / "annotations.jsonl"), "--task", "wwbl"]
        )
        assert rc == 3
        assert "--masks" in capsys.readouterr().err

    def test_two_thirds_percentage(self, base_args, tmp_path, capsys):
        gt = tmp_path / "gt.jsonl"
        records = []
        for i in range(3):
            records.append(
                {
                    "image_id": f"i{i}",
                    "regions": [{"phrase": "a red square", "box": [2, 2, 6, 6]}],
                }
            )
        gt.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        preds = [
            {"image_id": "i0", "detections": [{"phrase": "a red square", "box": [2, 2, 6, 6], "score": 0.9}]},
            {"image_id": "i1", "detections": [{"phrase": "a red square", "box": [2, 2, 6, 6], "score": 0.9}]},
            {"image_id": "i2", "detections": [{"phrase": "a red square", "box": [40, 40, 6, 6], "score": 0.9}]},
        ]
        pred_path = tmp_path / "p.jsonl"
        pred_path.write_text("\n".join(json.dumps(p) for p in preds) + "\n")
        rc = main(
            base_args
            + ["eval", "--pred", str(pred_path), "--gt", str(gt),
               "--task", "wwbl", "--metric", "box"]
        )
        assert rc == 0
        assert "box: 66.67" in capsys.readouterr().out
