"""Command-line entry points: synth, prepare, train, evaluate, predict, render.

Configuration is a flat text file of dotted keys (``loss.kind = focal``,
``train.batch_size = 24``); every default mirrors the training protocol, so
an empty config reproduces it. Exit codes: 0 success, 1 runtime failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import (EvaluationError, ScenePredictionError, class_map_image,
                         error_map_image, evaluate_prediction, predict_scene,
                         save_map_png)
from .ingest import (IngestError, LabelRaster, chart_path, label_path,
                     load_scene_by_id, normalize, rasterize_labels,
                     read_chart_geojson)
from .losses import LOSS_KINDS, LossSpec
from .model import CheckpointError, ModelConfig, load_checkpoint
from .sampling import (SamplingError, SplitError, SplitManifest, build_split,
                       region_window, sample_patches, save_patch_index)
from .synthetic import make_monthly_dataset
from .training import ExperimentData, TrainingConfig, TrainingDivergedError, run_experiment

__all__ = ["main", "RunConfig", "ConfigError"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Aggregated configuration for the pipeline commands."""

    training: TrainingConfig = field(default_factory=TrainingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    patch_size: int = 1000
    patches_per_scene: int = 100
    seed: int = 0

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_pairs(_parse_dotted(Path(path).read_text(), source=str(path)))

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "RunConfig":
        loss_kw, train_kw, model_kw, top = {}, {}, {}, {}
        for key, raw in pairs.items():
            section, _, name = key.partition(".")
            try:
                if section == "loss":
                    loss_kw[name] = _coerce(LossSpec, name, raw)
                elif section == "train":
                    train_kw[name] = _coerce(TrainingConfig, name, raw)
                elif section == "model":
                    model_kw[name] = _coerce(ModelConfig, name, raw)
                elif section == "prepare":
                    top[name] = int(raw)
                else:
                    raise ConfigError(f"unknown config section {section!r} in key {key!r}")
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        try:
            loss = LossSpec(**loss_kw)
            training = TrainingConfig(loss=loss, **train_kw)
            model = ModelConfig(**model_kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(training=training, model=model,
                   patch_size=top.get("patch_size", 1000),
                   patches_per_scene=top.get("patches_per_scene", 100),
                   seed=top.get("seed", 0))

    def to_text(self) -> str:
        lines = []
        for name, value in sorted(self.training.loss.to_dict().items()):
            lines.append(f"loss.{name} = {_fmt(value)}")
        train_doc = self.training.to_dict()
        train_doc.pop("loss")
        for name, value in sorted(train_doc.items()):
            lines.append(f"train.{name} = {_fmt(value)}")
        for name, value in sorted(self.model.to_dict().items()):
            lines.append(f"model.{name} = {_fmt(value)}")
        lines.append(f"prepare.patch_size = {self.patch_size}")
        lines.append(f"prepare.patches_per_scene = {self.patches_per_scene}")
        lines.append(f"prepare.seed = {self.seed}")
        return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except (ConfigError, SplitError, SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, CheckpointError, EvaluationError, ScenePredictionError,
            TrainingDivergedError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iceseg", description="Sea-ice type segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic 12-scene dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--year", type=int, default=2018)
    p.add_argument("--size", type=int, default=512, help="scene side length in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regions", type=int, default=14)
    p.add_argument("--nodata-corner", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("prepare", help="rasterize labels, build split and patch index")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--patches-per-scene", type=int)
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("train", help="train one loss across the configured seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--prepared", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--loss", choices=LOSS_KINDS)
    p.add_argument("--seed", type=int, help="train a single seed instead of the configured set")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints on full scenes and render maps")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--prepared", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", nargs="*", help="scene ids (default: the test scenes)")
    p.add_argument("--tiled", action="store_true",
                   help="overlapping-window inference for scenes too large for one pass")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("predict", help="write the predicted label raster for one scene")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tiled", action="store_true")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("render", help="render class/error maps from label rasters")
    p.add_argument("--labels", required=True, help="label or prediction GeoTIFF")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="reference labels; adds an error map")
    p.add_argument("--prefix", default="map")
    p.set_defaults(func=_cmd_render)
    return parser


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        config = RunConfig.from_file(path)
    else:
        config = RunConfig()
    if getattr(args, "loss", None):
        loss_doc = {**config.training.loss.to_dict(), "kind": args.loss}
        config.training = TrainingConfig.from_dict(
            {**config.training.to_dict(), "loss": loss_doc})
    if getattr(args, "seed", None) is not None:
        if args.command == "train":
            config.training = TrainingConfig.from_dict(
                {**config.training.to_dict(), "seeds": [args.seed]})
        else:
            config.seed = args.seed
    if getattr(args, "patch_size", None) is not None:
        config.patch_size = args.patch_size
    if getattr(args, "patches_per_scene", None) is not None:
        config.patches_per_scene = args.patches_per_scene
    return config


def _require_dir(path, what: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"{what} directory {path} does not exist")
    return path


def _cmd_synth(args) -> int:
    scene_ids = make_monthly_dataset(args.out, year=args.year,
                                     shape=(args.size, args.size), seed=args.seed,
                                     n_regions=args.regions,
                                     nodata_corner=args.nodata_corner)
    print(f"wrote {len(scene_ids)} scenes to {args.out}")
    return 0


def _cmd_prepare(args) -> int:
    data_dir = _require_dir(args.data, "data")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _load_config(args)

    scene_ids = sorted(p.name[:-len("_hh.tif")] for p in data_dir.glob("*_hh.tif"))
    if not scene_ids:
        raise IngestError(f"no scenes found in {data_dir} (expected YYYY-MM_hh.tif files)")
    for scene_id in scene_ids:
        if not chart_path(data_dir, scene_id).exists():
            raise IngestError(f"scene {scene_id}: missing chart {chart_path(data_dir, scene_id)}")

    manifest = build_split(scene_ids, seed=config.seed, patch_size=config.patch_size,
                           patches_per_scene=config.patches_per_scene)

    shapes = {}
    for scene_id in scene_ids:
        stack = load_scene_by_id(data_dir, scene_id)
        polygons = read_chart_geojson(chart_path(data_dir, scene_id))
        labels = rasterize_labels(polygons, stack)
        labels.save(label_path(out_dir, scene_id))
        shapes[scene_id] = stack.shape
        print(f"prepared {scene_id}: {labels.shape[0]}x{labels.shape[1]} labels")

    patches = []
    for scene_id, half in manifest.train_sources():
        region = region_window(shapes[scene_id], half)
        patches += sample_patches(_SceneShim(scene_id, shapes[scene_id]), n=config.patches_per_scene,
                                  seed=config.seed, size=config.patch_size, region=region)
    manifest.save(out_dir / "split.json")
    save_patch_index(out_dir / "patches.json", patches, seed=config.seed,
                     patch_size=config.patch_size, patches_per_scene=config.patches_per_scene)
    print(f"split: test={manifest.test_scenes} val={manifest.val_scenes}; "
          f"{len(patches)} training patches")
    return 0


def _cmd_train(args) -> int:
    data_dir = _require_dir(args.data, "data")
    prepared_dir = _require_dir(args.prepared, "prepared")
    config = _load_config(args)
    data = ExperimentData.load(data_dir, prepared_dir)
    out_dir = Path(args.out) / config.training.loss.kind
    report = run_experiment(data, config.training, config.model,
                            out_dir=out_dir, device=args.device)
    agg = report["aggregate"]
    print(f"{config.training.loss.kind}: test weighted F1 "
          f"mean={agg['mean_weighted_f1']:.4f} "
          f"min={agg['min_weighted_f1']:.4f} max={agg['max_weighted_f1']:.4f}")
    print(f"report: {out_dir / 'report.json'}")
    return 0


def _cmd_evaluate(args) -> int:
    data_dir = _require_dir(args.data, "data")
    prepared_dir = _require_dir(args.prepared, "prepared")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = SplitManifest.load(prepared_dir / "split.json")
    scene_ids = args.scenes or manifest.test_scenes

    mean_scores = []
    for index, checkpoint_path in enumerate(args.checkpoint):
        model, _ = load_checkpoint(checkpoint_path, device=args.device)
        tag = f"checkpoint_{index}" if len(args.checkpoint) > 1 else "checkpoint"
        ckpt_dir = out_dir / tag
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        scores = []
        for scene_id in scene_ids:
            stack = load_scene_by_id(data_dir, scene_id)
            truth = LabelRaster.load(label_path(prepared_dir, scene_id))
            predicted = predict_scene(model, normalize(stack), nodata_mask=stack.nodata_mask,
                                      device=args.device, tiled=args.tiled)
            report = evaluate_prediction(predicted, truth.codes, scene_id=scene_id)
            report.save(ckpt_dir / f"{scene_id}_report.json")
            report.save_confusion_csv(ckpt_dir / f"{scene_id}_confusion.csv")
            save_map_png(ckpt_dir / f"{scene_id}_prediction.png",
                         class_map_image(predicted), stack.transform)
            save_map_png(ckpt_dir / f"{scene_id}_errors.png",
                         error_map_image(predicted, truth.codes), stack.transform)
            scores.append(report.weighted_f1)
            print(f"{tag} {scene_id}: weighted F1 = {report.weighted_f1:.4f}")
        mean_scores.append(float(np.mean(scores)))

    aggregate = {
        "checkpoints": list(args.checkpoint),
        "scenes": list(scene_ids),
        "mean_weighted_f1": float(np.mean(mean_scores)),
        "min_weighted_f1": float(np.min(mean_scores)),
        "max_weighted_f1": float(np.max(mean_scores)),
    }
    (out_dir / "aggregate.json").write_text(json.dumps(aggregate, indent=2) + "\n")
    print(f"aggregate: mean={aggregate['mean_weighted_f1']:.4f} "
          f"min={aggregate['min_weighted_f1']:.4f} max={aggregate['max_weighted_f1']:.4f}")
    return 0


def _cmd_predict(args) -> int:
    data_dir = _require_dir(args.data, "data")
    model, _ = load_checkpoint(args.checkpoint, device=args.device)
    stack = load_scene_by_id(data_dir, args.scene)
    predicted = predict_scene(model, normalize(stack), nodata_mask=stack.nodata_mask,
                              device=args.device, tiled=args.tiled)
    out = Path(args.out)
    if out.is_dir() or out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"{args.scene}_prediction.tif"
    LabelRaster(predicted, stack.transform, epsg=stack.epsg).save(out)
    print(f"wrote {out}")
    return 0


def _cmd_render(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = LabelRaster.load(args.labels)
    save_map_png(out_dir / f"{args.prefix}_classes.png",
                 class_map_image(labels.codes), labels.transform)
    if args.truth:
        truth = LabelRaster.load(args.truth)
        save_map_png(out_dir / f"{args.prefix}_errors.png",
                     error_map_image(labels.codes, truth.codes), labels.transform)
    print(f"wrote maps to {out_dir}")
    return 0


class _SceneShim:
    """Carries just the fields sample_patches needs."""

    def __init__(self, scene_id: str, shape: tuple[int, int]):
        self.scene_id = scene_id
        self.shape = shape


def _parse_dotted(text: str, source: str = "<config>") -> dict[str, str]:
    pairs = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def _coerce(cls, name: str, raw: str):
    hints = {f.name: f.type for f in cls.__dataclass_fields__.values()}
    if name not in hints:
        raise ConfigError(f"unknown option {name!r} for section {cls.__name__}")
    hint = str(hints[name])
    if "tuple" in hint:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if "int" in hint:
        return int(raw)
    if "float" in hint:
        return float(raw)
    if "bool" in hint:
        return raw.lower() in ("1", "true", "yes", "on")
    if raw.lower() in ("none", ""):
        return None
    return raw


def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


if __name__ == "__main__":
    sys.exit(main())
