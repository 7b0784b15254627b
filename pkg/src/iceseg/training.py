"""Optimization protocol: Adam, plateau LR decay, early stopping, seed repeats.

The learning rate starts at 1e-5 and is multiplied by 0.1 whenever the
validation loss has not strictly decreased for five epochs (floored at
1e-8); training stops after twenty epochs without a strict decrease. The
weights from the best-validation epoch are what gets evaluated. Experiments
are repeated over several seeds and reported as mean/min/max.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .evaluation import evaluate_prediction, predict_scene
from .ice_types import IGNORE_VALUE
from .ingest import LabelRaster, load_scene_by_id, normalize
from .losses import LossSpec, make_loss
from .model import IceTypeNet, ModelConfig, build_model, save_checkpoint
from .sampling import Patch, SplitManifest, half_window, load_patch_index

__all__ = [
    "TrainingConfig",
    "PlateauSchedule",
    "EpochRecord",
    "TrainResult",
    "TrainingDivergedError",
    "ExperimentData",
    "train",
    "evaluate_loss",
    "run_experiment",
    "write_history_csv",
]


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 24
    optimizer: str = "adam"
    lr_init: float = 1e-5
    lr_factor: float = 0.1
    lr_patience: int = 5
    lr_min: float = 1e-8
    early_stop_patience: int = 20
    max_epochs: int = 500
    seeds: tuple[int, ...] = (0, 1, 2)
    loss: LossSpec = field(default_factory=LossSpec)
    # Validation regions larger than this are evaluated in stride-aligned
    # tiles whose losses are pooled by labeled-pixel count; exact for the
    # pixel-mean losses, a close approximation for Dice.
    val_tile: int = 1024

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_init:
            raise ValueError("need 0 < lr_min <= lr_init")
        if not 0 < self.lr_factor < 1:
            raise ValueError("lr_factor must be in (0, 1)")
        if self.lr_patience <= 0 or self.early_stop_patience <= 0:
            raise ValueError("patiences must be positive")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["seeds"] = list(self.seeds)
        doc["loss"] = self.loss.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingConfig":
        doc = dict(doc)
        doc["seeds"] = tuple(doc.get("seeds", (0, 1, 2)))
        if isinstance(doc.get("loss"), dict):
            doc["loss"] = LossSpec.from_dict(doc["loss"])
        return cls(**doc)


class PlateauSchedule:
    """Pure reduce-on-plateau + early-stop automaton.

    ``observe`` is called once per epoch with the validation loss. Any
    strict decrease resets both patience counters; the LR counter also
    resets when the rate is cut.
    """

    def __init__(self, lr_init: float, factor: float = 0.1, patience: int = 5,
                 lr_min: float = 1e-8, stop_patience: int = 20):
        self.lr = lr_init
        self.factor = factor
        self.patience = patience
        self.lr_min = lr_min
        self.stop_patience = stop_patience
        self.best: float | None = None
        self.epochs_since_improvement = 0
        self._lr_wait = 0
        self.should_stop = False

    def observe(self, val_loss: float) -> bool:
        improved = self.best is None or val_loss < self.best
        if improved:
            self.best = val_loss
            self.epochs_since_improvement = 0
            self._lr_wait = 0
        else:
            self.epochs_since_improvement += 1
            self._lr_wait += 1
            if self._lr_wait >= self.patience:
                self.lr = max(self.lr * self.factor, self.lr_min)
                self._lr_wait = 0
            if self.epochs_since_improvement >= self.stop_patience:
                self.should_stop = True
        return improved


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_val_loss: float
    history: list[EpochRecord]
    stopped_early: bool


def train(model: IceTypeNet, train_patches, val_regions, config: TrainingConfig,
          seed: int = 0, device: str = "cpu", out_dir=None) -> TrainResult:
    """Run the full optimization loop and return the best-epoch weights.

    ``train_patches`` is a sequence of (inputs (3,S,S) float32, labels (S,S))
    pairs; ``val_regions`` the same at region size. Patch order is shuffled
    every epoch from ``seed``; a trailing batch of one sample is dropped
    (batch statistics need at least two).
    """
    if len(train_patches) == 0 or len(val_regions) == 0:
        raise ValueError("need non-empty train patches and validation regions")
    if len(train_patches) < 2:
        raise ValueError("need at least 2 training patches for batch statistics")

    torch.manual_seed(seed)
    model.to(device)
    loss_fn = make_loss(config.loss)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_init)
    schedule = PlateauSchedule(config.lr_init, config.lr_factor, config.lr_patience,
                               config.lr_min, config.early_stop_patience)
    rng = np.random.default_rng(seed)

    history: list[EpochRecord] = []
    best_state: dict = {}
    best_epoch = 0
    stopped_early = False

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        epoch_lr = schedule.lr
        order = rng.permutation(len(train_patches))
        total, count = 0.0, 0
        for batch in _batches(order, config.batch_size):
            inputs = torch.from_numpy(
                np.stack([train_patches[i][0] for i in batch])).to(device)
            targets = torch.from_numpy(
                np.stack([train_patches[i][1] for i in batch]).astype(np.int64)).to(device)
            optimizer.zero_grad()
            loss = loss_fn(model(inputs), targets)
            if not torch.isfinite(loss):
                message = f"non-finite training loss at epoch {epoch}"
                if out_dir is not None:
                    diag = save_checkpoint(model, Path(out_dir) / "diverged",
                                           training_config=config.to_dict(), epoch=epoch,
                                           history=[asdict(h) for h in history])
                    message += f"; diagnostic checkpoint at {diag}"
                raise TrainingDivergedError(message)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
            count += len(batch)

        train_loss = total / count
        val_loss = evaluate_loss(model, val_regions, loss_fn, device=device,
                                 max_tile=config.val_tile, ignore_value=config.loss.ignore_value)
        if schedule.observe(val_loss):
            best_state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
            best_epoch = epoch
        for group in optimizer.param_groups:
            group["lr"] = schedule.lr
        history.append(EpochRecord(epoch, train_loss, val_loss, epoch_lr))
        if schedule.should_stop:
            stopped_early = True
            break

    return TrainResult(best_state=best_state, best_epoch=best_epoch,
                       best_val_loss=schedule.best, history=history,
                       stopped_early=stopped_early)


def evaluate_loss(model, regions, loss_fn, device: str = "cpu", max_tile: int = 1024,
                  ignore_value: int = IGNORE_VALUE) -> float:
    """Loss over full regions in inference mode, pooled by labeled pixels.

    Regions no larger than ``max_tile`` go through in a single pass; larger
    ones are split into non-overlapping tiles at stride-aligned offsets.
    """
    model.eval()
    weighted, weight = 0.0, 0
    with torch.no_grad():
        for inputs, targets in regions:
            for r0, r1, c0, c1 in _tile_windows(targets.shape, max_tile):
                target_tile = np.ascontiguousarray(targets[r0:r1, c0:c1]).astype(np.int64)
                n_valid = int((target_tile != ignore_value).sum())
                if n_valid == 0:
                    continue
                input_tile = torch.from_numpy(
                    np.ascontiguousarray(inputs[:, r0:r1, c0:c1])).unsqueeze(0).to(device)
                value = loss_fn(model(input_tile),
                                torch.from_numpy(target_tile).unsqueeze(0).to(device))
                weighted += float(value) * n_valid
                weight += n_valid
    if weight == 0:
        raise ValueError("validation regions contain no labeled pixels")
    return weighted / weight


@dataclass
class ExperimentData:
    """Prepared scenes in memory: normalized inputs, labels, nodata masks."""

    inputs: dict[str, np.ndarray]
    labels: dict[str, np.ndarray]
    masks: dict[str, np.ndarray]
    manifest: SplitManifest
    patches: list[Patch]

    @classmethod
    def load(cls, data_dir, prepared_dir) -> "ExperimentData":
        from .ingest import label_path  # local alias for clarity

        prepared_dir = Path(prepared_dir)
        manifest = SplitManifest.load(prepared_dir / "split.json")
        patches = load_patch_index(prepared_dir / "patches.json")
        inputs, labels, masks = {}, {}, {}
        scene_ids = (manifest.train_scenes + manifest.val_scenes + manifest.test_scenes)
        for scene_id in scene_ids:
            stack = load_scene_by_id(data_dir, scene_id)
            inputs[scene_id] = normalize(stack)
            labels[scene_id] = LabelRaster.load(label_path(prepared_dir, scene_id)).codes
            masks[scene_id] = stack.nodata_mask
        return cls(inputs=inputs, labels=labels, masks=masks,
                   manifest=manifest, patches=patches)

    def train_patch_arrays(self):
        return [(self.inputs[p.scene_id][:, p.row0:p.row0 + p.size, p.col0:p.col0 + p.size],
                 self.labels[p.scene_id][p.row0:p.row0 + p.size, p.col0:p.col0 + p.size])
                for p in self.patches]

    def val_region_arrays(self):
        regions = []
        for scene_id, half in self.manifest.val_regions:
            r0, c0, h, w = half_window(self.labels[scene_id].shape, half)
            regions.append((self.inputs[scene_id][:, r0:r0 + h, c0:c0 + w],
                            self.labels[scene_id][r0:r0 + h, c0:c0 + w]))
        return regions


def run_experiment(data: ExperimentData, config: TrainingConfig,
                   model_config: ModelConfig | None = None, out_dir=None,
                   device: str = "cpu", tiled_inference: bool = False) -> dict:
    """Train once per seed, evaluate the test scenes, aggregate mean/min/max.

    When ``out_dir`` is given, per-seed artifacts land in ``out_dir/<seed>/``
    (best checkpoint + history.csv) and the aggregate in ``out_dir/report.json``.
    """
    model_config = model_config or ModelConfig()
    train_patches = data.train_patch_arrays()
    val_regions = data.val_region_arrays()

    per_seed = []
    checkpoints = []
    for seed in config.seeds:
        model = build_model(model_config, seed=seed)
        seed_dir = Path(out_dir) / str(seed) if out_dir is not None else None
        result = train(model, train_patches, val_regions, config,
                       seed=seed, device=device, out_dir=seed_dir)
        model.load_state_dict(result.best_state)

        scene_f1 = {}
        for scene_id in data.manifest.test_scenes:
            predicted = predict_scene(model, data.inputs[scene_id],
                                      nodata_mask=data.masks[scene_id],
                                      device=device, tiled=tiled_inference)
            report = evaluate_prediction(predicted, data.labels[scene_id], scene_id=scene_id)
            scene_f1[scene_id] = report.weighted_f1
        test_f1 = float(np.mean(list(scene_f1.values())))

        record = {
            "seed": seed,
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
            "epochs_run": len(result.history),
            "stopped_early": result.stopped_early,
            "scene_weighted_f1": scene_f1,
            "test_weighted_f1": test_f1,
        }
        if seed_dir is not None:
            checkpoint = save_checkpoint(
                model, seed_dir / "best", training_config=config.to_dict(),
                epoch=result.best_epoch, val_loss=result.best_val_loss,
                history=[asdict(h) for h in result.history])
            write_history_csv(seed_dir / "history.csv", result.history)
            record["checkpoint"] = str(checkpoint)
            checkpoints.append(str(checkpoint))
        per_seed.append(record)

    scores = [r["test_weighted_f1"] for r in per_seed]
    report = {
        "loss": config.loss.kind,
        "seeds": list(config.seeds),
        "per_seed": per_seed,
        "aggregate": {
            "mean_weighted_f1": float(np.mean(scores)),
            "min_weighted_f1": float(np.min(scores)),
            "max_weighted_f1": float(np.max(scores)),
        },
        "checkpoints": checkpoints,
    }
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def write_history_csv(path, history: list[EpochRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for record in history:
            writer.writerow([record.epoch, f"{record.train_loss:.8g}",
                             f"{record.val_loss:.8g}", f"{record.lr:.8g}"])


def _batches(order: np.ndarray, batch_size: int):
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches.pop()
    return batches


def _tile_windows(shape: tuple[int, int], max_tile: int, align: int = 16):
    height, width = shape
    tile = max(align, (max_tile // align) * align)
    for r0 in range(0, height, tile):
        for c0 in range(0, width, tile):
            yield r0, min(r0 + tile, height), c0, min(c0 + tile, width)
