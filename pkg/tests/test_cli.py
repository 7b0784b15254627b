import hashlib
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from iceseg.cli import ConfigError, RunConfig, main
from iceseg.ingest import LabelRaster
from iceseg.losses import LossSpec
from iceseg.sampling import SplitManifest
from iceseg.training import TrainingConfig


def tree_digest(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


SMALL_TRAIN_CFG = """
train.batch_size = 4
train.lr_init = 1e-3
train.lr_min = 1e-6
train.max_epochs = 2
train.seeds = 0
"""


class TestRunConfig:
    def test_empty_config_mirrors_protocol(self):
        config = RunConfig()
        assert config.training == TrainingConfig()
        assert config.training.loss == LossSpec()
        assert config.patch_size == 1000
        assert config.patches_per_scene == 100

    def test_text_roundtrip(self):
        config = RunConfig()
        config.training = TrainingConfig.from_dict(
            {**TrainingConfig().to_dict(), "batch_size": 12,
             "loss": {"kind": "focal", "focal_gamma": 1.5}})
        config.patch_size = 256
        text = config.to_text()
        parsed = RunConfig.from_pairs(
            dict(line.split(" = ") for line in text.strip().splitlines()))
        assert parsed.training == config.training
        assert parsed.model == config.model
        assert parsed.patch_size == 256

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("# comment\n\nloss.kind = dice  # trailing\n")
        assert RunConfig.from_file(path).training.loss.kind == "dice"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("loss.flavor = spicy\n")
        with pytest.raises(ConfigError):
            RunConfig.from_file(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("train.batch_size = many\n")
        with pytest.raises(ConfigError):
            RunConfig.from_file(path)


class TestExitCodes:
    def test_invalid_loss_name_is_usage_error(self, tiny_dataset):
        data_dir, prep_dir = tiny_dataset
        rc = main(["train", "--data", str(data_dir), "--prepared", str(prep_dir),
                   "--out", "/tmp/never", "--loss", "hinge"])
        assert rc == 2

    def test_missing_subcommand_is_usage_error(self):
        assert main([]) == 2

    def test_missing_data_dir_is_config_error(self, tmp_path):
        rc = main(["prepare", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_missing_chart_is_runtime_error(self, tiny_dataset, tmp_path, capsys):
        data_dir, _ = tiny_dataset
        broken = tmp_path / "broken"
        shutil.copytree(data_dir, broken)
        (broken / "2018-05_chart.geojson").unlink()
        rc = main(["prepare", "--data", str(broken), "--out", str(tmp_path / "prep")])
        assert rc == 1
        assert "2018-05" in capsys.readouterr().err

    def test_bad_checkpoint_is_runtime_error(self, tiny_dataset, tmp_path):
        data_dir, prep_dir = tiny_dataset
        rc = main(["evaluate", "--checkpoint", str(tmp_path / "missing.npz"),
                   "--data", str(data_dir), "--prepared", str(prep_dir),
                   "--out", str(tmp_path / "out")])
        assert rc == 1


class TestPrepare:
    def test_outputs(self, tiny_dataset):
        data_dir, prep_dir = tiny_dataset
        labels = sorted(p.name for p in prep_dir.glob("*_labels.tif"))
        assert len(labels) == 12
        manifest = SplitManifest.load(prep_dir / "split.json")
        assert manifest.test_scenes == ["2018-01", "2018-07"]
        assert len(manifest.val_regions) == 4
        patch_doc = json.loads((prep_dir / "patches.json").read_text())
        # ten training sources (six full scenes + four halves), four patches each
        assert len(patch_doc["patches"]) == 40

    def test_label_raster_contents(self, tiny_dataset):
        _, prep_dir = tiny_dataset
        labels = LabelRaster.load(prep_dir / "2018-03_labels.tif")
        assert labels.codes.shape == (96, 96)
        assert set(np.unique(labels.codes)) <= set(range(5)) | {255}

    def test_rerun_is_byte_identical(self, tiny_dataset, tmp_path):
        data_dir, prep_dir = tiny_dataset
        again = tmp_path / "prep_again"
        rc = main(["prepare", "--data", str(data_dir), "--out", str(again),
                   "--patch-size", "32", "--patches-per-scene", "4"])
        assert rc == 0
        assert tree_digest(again) == tree_digest(prep_dir)


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    data_dir, prep_dir = tiny_dataset
    out_dir = tmp_path_factory.mktemp("runs")
    cfg = out_dir / "cfg.txt"
    cfg.write_text(SMALL_TRAIN_CFG)
    rc = main(["train", "--data", str(data_dir), "--prepared", str(prep_dir),
               "--out", str(out_dir), "--loss", "ce", "--config", str(cfg)])
    assert rc == 0
    return out_dir


class TestTrainEvaluate:
    def test_train_artifacts(self, trained):
        assert (trained / "ce" / "0" / "best.npz").exists()
        assert (trained / "ce" / "0" / "best.json").exists()
        assert (trained / "ce" / "0" / "history.csv").exists()
        report = json.loads((trained / "ce" / "report.json").read_text())
        assert report["loss"] == "ce"
        assert {"mean_weighted_f1", "min_weighted_f1", "max_weighted_f1"} \
            <= set(report["aggregate"])

    def test_evaluate_artifacts_and_determinism(self, trained, tiny_dataset, tmp_path):
        data_dir, prep_dir = tiny_dataset
        checkpoint = trained / "ce" / "0" / "best.npz"
        out_a, out_b = tmp_path / "eval_a", tmp_path / "eval_b"
        for out in (out_a, out_b):
            rc = main(["evaluate", "--checkpoint", str(checkpoint),
                       "--data", str(data_dir), "--prepared", str(prep_dir),
                       "--out", str(out)])
            assert rc == 0
        for scene_id in ("2018-01", "2018-07"):
            base = out_a / "checkpoint"
            assert (base / f"{scene_id}_report.json").exists()
            assert (base / f"{scene_id}_prediction.png").exists()
            assert (base / f"{scene_id}_errors.png").exists()
            assert (base / f"{scene_id}_prediction.pgw").exists()
        assert json.loads((out_a / "aggregate.json").read_text()) \
            == json.loads((out_b / "aggregate.json").read_text())
        assert tree_digest(out_a) == tree_digest(out_b)

    def test_predict_writes_label_raster(self, trained, tiny_dataset, tmp_path):
        data_dir, _ = tiny_dataset
        rc = main(["predict", "--checkpoint", str(trained / "ce" / "0" / "best.npz"),
                   "--data", str(data_dir), "--scene", "2018-01",
                   "--out", str(tmp_path / "pred")])
        assert rc == 0
        raster = LabelRaster.load(tmp_path / "pred" / "2018-01_prediction.tif")
        assert raster.codes.shape == (96, 96)
        assert set(np.unique(raster.codes)) <= set(range(5)) | {255}

    def test_render_from_rasters(self, trained, tiny_dataset, tmp_path):
        data_dir, prep_dir = tiny_dataset
        rc = main(["render", "--labels", str(prep_dir / "2018-01_labels.tif"),
                   "--truth", str(prep_dir / "2018-01_labels.tif"),
                   "--out", str(tmp_path / "maps"), "--prefix", "jan"])
        assert rc == 0
        assert (tmp_path / "maps" / "jan_classes.png").exists()
        assert (tmp_path / "maps" / "jan_errors.png").exists()
        assert (tmp_path / "maps" / "jan_classes.pgw").exists()


class TestFocalReducesToCE:
    def test_focal_gamma_zero_history_matches_ce(self, tiny_dataset, tmp_path):
        data_dir, prep_dir = tiny_dataset
        histories = {}
        for tag, extra in (("ce", "loss.kind = ce\n"),
                           ("focal", "loss.kind = focal\nloss.focal_gamma = 0\n")):
            out = tmp_path / tag
            cfg = tmp_path / f"{tag}.txt"
            cfg.write_text(SMALL_TRAIN_CFG + extra)
            rc = main(["train", "--data", str(data_dir), "--prepared", str(prep_dir),
                       "--out", str(out), "--config", str(cfg)])
            assert rc == 0
            kind = tag if tag == "ce" else "focal"
            histories[tag] = (out / kind / "0" / "history.csv").read_text().splitlines()[1:]
        for row_ce, row_focal in zip(histories["ce"], histories["focal"]):
            for a, b in zip(row_ce.split(","), row_focal.split(",")):
                assert abs(float(a) - float(b)) < 1e-6
