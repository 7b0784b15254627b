"""Full-scene inference, weighted F1 scoring and map rendering.

Predictions are produced in a single forward pass over the whole scene by
default; tiled inference (overlapping windows, center-cropped) is an
explicit opt-in for scenes that do not fit in memory. Scores are
support-weighted means of per-class F1, with ignored truth pixels excluded
everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .geotiff import GeoTransform, write_world_file
from .ice_types import IGNORE_VALUE, NUM_CLASSES, IceType

__all__ = [
    "EvalReport",
    "ClassScores",
    "EvaluationError",
    "ScenePredictionError",
    "CLASS_COLORS",
    "predict_scene",
    "confusion_matrix",
    "evaluate_prediction",
    "class_map_image",
    "error_map_image",
    "save_map_png",
]

# One fixed legend for every figure: cold-to-warm with development stage.
CLASS_COLORS = {
    IceType.WATER: (8, 48, 107),           # dark blue
    IceType.NEW_ICE: (158, 202, 225),      # light blue
    IceType.YOUNG_ICE: (255, 217, 47),     # yellow
    IceType.FIRST_YEAR_ICE: (253, 141, 60),  # orange
    IceType.OLD_ICE: (203, 24, 29),        # red
}
IGNORE_COLOR = (190, 190, 190)
ERROR_COLOR = (203, 24, 29)
NO_ERROR_COLOR = (255, 255, 255)


class EvaluationError(ValueError):
    pass


class ScenePredictionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    scene_id: str
    weighted_f1: float
    per_class: dict[str, ClassScores]
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "weighted_f1": self.weighted_f1,
            "per_class": {
                name: {"precision": s.precision, "recall": s.recall,
                       "f1": s.f1, "support": s.support}
                for name, s in self.per_class.items()
            },
            "confusion": self.confusion.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def save_confusion_csv(self, path) -> None:
        names = [t.name for t in IceType]
        lines = ["true\\pred," + ",".join(names)]
        for i, name in enumerate(names):
            lines.append(name + "," + ",".join(str(int(v)) for v in self.confusion[i]))
        Path(path).write_text("\n".join(lines) + "\n")


def predict_scene(model, inputs: np.ndarray, nodata_mask: np.ndarray | None = None,
                  device: str = "cpu", tiled: bool = False, tile_size: int = 1024,
                  overlap: int = 128) -> np.ndarray:
    """Per-pixel argmax class codes for a normalized (3, H, W) scene.

    The default is one forward pass over the full image. If that exhausts
    memory the call fails with instructions to rerun with ``tiled=True``
    rather than silently changing the inference mode.
    """
    if inputs.ndim != 3:
        raise ValueError(f"expected (bands, H, W) inputs, got shape {inputs.shape}")
    model.eval()
    if tiled:
        codes = _predict_tiled(model, inputs, device, tile_size, overlap)
    else:
        try:
            codes = _predict_window(model, inputs, device)
        except RuntimeError as exc:
            if _looks_like_oom(exc):
                raise ScenePredictionError(
                    "single-pass inference ran out of memory; rerun with tiled=True "
                    "(overlapping windows, center-cropped)") from exc
            raise
    if nodata_mask is not None:
        codes = codes.copy()
        codes[nodata_mask] = IGNORE_VALUE
    return codes


def confusion_matrix(predicted: np.ndarray, truth: np.ndarray,
                     ignore_value: int = IGNORE_VALUE) -> np.ndarray:
    """K x K counts, rows = true class, columns = predicted class.

    Pixels ignored in the truth (and nodata pixels carrying the ignore code
    in the prediction) are excluded.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise EvaluationError(f"shape mismatch: prediction {predicted.shape} vs truth {truth.shape}")
    valid = (truth != ignore_value) & (predicted != ignore_value)
    t = truth[valid].astype(np.int64)
    p = predicted[valid].astype(np.int64)
    if t.size and (t.max() >= NUM_CLASSES or p.max() >= NUM_CLASSES):
        raise EvaluationError("label codes outside the class range")
    counts = np.bincount(t * NUM_CLASSES + p, minlength=NUM_CLASSES * NUM_CLASSES)
    return counts.reshape(NUM_CLASSES, NUM_CLASSES)


def evaluate_prediction(predicted: np.ndarray, truth: np.ndarray,
                        scene_id: str = "", ignore_value: int = IGNORE_VALUE) -> EvalReport:
    """Support-weighted F1 plus per-class precision/recall/F1/support."""
    confusion = confusion_matrix(predicted, truth, ignore_value)
    total = int(confusion.sum())
    if total == 0:
        raise EvaluationError("no evaluable pixels (truth is all-ignore)")

    per_class = {}
    f1s = np.zeros(NUM_CLASSES)
    supports = confusion.sum(axis=1)
    for k in range(NUM_CLASSES):
        tp = float(confusion[k, k])
        fp = float(confusion[:, k].sum() - tp)
        fn = float(confusion[k, :].sum() - tp)
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        f1s[k] = f1
        per_class[IceType(k).name] = ClassScores(precision, recall, f1, int(supports[k]))

    weighted = float((supports * f1s).sum() / supports.sum())
    return EvalReport(scene_id=scene_id, weighted_f1=weighted,
                      per_class=per_class, confusion=confusion)


def class_map_image(codes: np.ndarray, ignore_value: int = IGNORE_VALUE) -> np.ndarray:
    """RGB rendering of a label or prediction raster with the fixed legend."""
    rgb = np.empty(codes.shape + (3,), dtype=np.uint8)
    rgb[:] = IGNORE_COLOR
    for ice_type, color in CLASS_COLORS.items():
        rgb[codes == int(ice_type)] = color
    return rgb


def error_map_image(predicted: np.ndarray, truth: np.ndarray,
                    ignore_value: int = IGNORE_VALUE) -> np.ndarray:
    """Marks disagreeing pixels; pixels unlabeled in the truth are blanked."""
    if predicted.shape != truth.shape:
        raise EvaluationError(f"shape mismatch: prediction {predicted.shape} vs truth {truth.shape}")
    rgb = np.empty(truth.shape + (3,), dtype=np.uint8)
    rgb[:] = NO_ERROR_COLOR
    rgb[predicted != truth] = ERROR_COLOR
    rgb[truth == ignore_value] = IGNORE_COLOR
    return rgb


def save_map_png(path, rgb: np.ndarray, transform: GeoTransform | None = None) -> None:
    path = Path(path)
    Image.fromarray(rgb).save(path)
    if transform is not None:
        write_world_file(path.with_suffix(".pgw"), transform)


def _predict_window(model, inputs: np.ndarray, device: str) -> np.ndarray:
    with torch.no_grad():
        batch = torch.from_numpy(np.ascontiguousarray(inputs)).unsqueeze(0).to(device)
        logits = model(batch)
        return logits.argmax(dim=1).squeeze(0).cpu().numpy().astype(np.uint8)


def _predict_tiled(model, inputs: np.ndarray, device: str,
                   tile_size: int, overlap: int) -> np.ndarray:
    if tile_size <= 2 * overlap:
        raise ValueError("tile_size must exceed twice the overlap")
    _, height, width = inputs.shape
    core = tile_size - 2 * overlap
    out = np.empty((height, width), dtype=np.uint8)
    for r0 in range(0, height, core):
        r1 = min(r0 + core, height)
        wr0, wr1 = max(0, r0 - overlap), min(height, r1 + overlap)
        for c0 in range(0, width, core):
            c1 = min(c0 + core, width)
            wc0, wc1 = max(0, c0 - overlap), min(width, c1 + overlap)
            window = np.ascontiguousarray(inputs[:, wr0:wr1, wc0:wc1])
            codes = _predict_window(model, window, device)
            out[r0:r1, c0:c1] = codes[r0 - wr0:r1 - wr0, c0 - wc0:c1 - wc0]
    return out


def _looks_like_oom(exc: RuntimeError) -> bool:
    text = str(exc).lower()
    return "memory" in text or "alloc" in text
