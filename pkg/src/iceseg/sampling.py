"""Train/validation/test split over the twelve monthly scenes, patch sampling.

January and July are held out for testing. Half of February, June, August
and December is clipped for validation; everything else (including the
other half of those four scenes) provides training patches. Training
samples are randomly placed fixed-size windows; patches may overlap and may
contain ignore pixels.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SplitManifest",
    "Patch",
    "SplitError",
    "SamplingError",
    "TEST_MONTHS",
    "VAL_MONTHS",
    "build_split",
    "sample_patches",
    "half_window",
    "region_window",
]

TEST_MONTHS = (1, 7)
VAL_MONTHS = (2, 6, 8, 12)

# The source only says half of each scene is clipped for validation; the
# orientation is fixed here so the split is reproducible.
VAL_HALF = "left"

DEFAULT_PATCH_SIZE = 1000
DEFAULT_PATCHES_PER_SCENE = 100


class SplitError(ValueError):
    pass


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class Patch:
    """A square training window inside one scene's train region."""

    scene_id: str
    row0: int
    col0: int
    size: int = DEFAULT_PATCH_SIZE


@dataclass
class SplitManifest:
    train_scenes: list[str]
    val_regions: list[tuple[str, str]]  # (scene_id, half)
    test_scenes: list[str]
    seed: int = 0
    patch_size: int = DEFAULT_PATCH_SIZE
    patches_per_scene: int = DEFAULT_PATCHES_PER_SCENE

    @property
    def val_scenes(self) -> list[str]:
        return [scene for scene, _ in self.val_regions]

    def train_sources(self) -> list[tuple[str, str | None]]:
        """Scenes providing training patches: full scenes plus the halves
        complementary to the validation halves."""
        sources = [(scene, None) for scene in self.train_scenes]
        sources += [(scene, _OPPOSITE[half]) for scene, half in self.val_regions]
        return sources

    def to_json(self) -> str:
        return json.dumps({
            "train": self.train_scenes,
            "val": [{"scene": scene, "half": half} for scene, half in self.val_regions],
            "test": self.test_scenes,
            "seed": self.seed,
            "patch_size": self.patch_size,
            "patches_per_scene": self.patches_per_scene,
        }, indent=2)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        doc = json.loads(text)
        return cls(
            train_scenes=list(doc["train"]),
            val_regions=[(entry["scene"], entry["half"]) for entry in doc["val"]],
            test_scenes=list(doc["test"]),
            seed=int(doc.get("seed", 0)),
            patch_size=int(doc.get("patch_size", DEFAULT_PATCH_SIZE)),
            patches_per_scene=int(doc.get("patches_per_scene", DEFAULT_PATCHES_PER_SCENE)),
        )

    @classmethod
    def load(cls, path) -> "SplitManifest":
        return cls.from_json(Path(path).read_text())


_OPPOSITE = {"left": "right", "right": "left", "top": "bottom", "bottom": "top"}


def build_split(scene_ids: list[str], seed: int = 0,
                patch_size: int = DEFAULT_PATCH_SIZE,
                patches_per_scene: int = DEFAULT_PATCHES_PER_SCENE) -> SplitManifest:
    """Deterministic split of the twelve monthly scenes."""
    months = {}
    for scene_id in scene_ids:
        month = _parse_month(scene_id)
        if month in months:
            raise SplitError(f"duplicate scene for month {month}: {scene_id}")
        months[month] = scene_id
    missing = sorted(set(range(1, 13)) - set(months))
    if missing:
        raise SplitError(f"missing monthly scenes: {', '.join(f'{m:02d}' for m in missing)}")

    test = [months[m] for m in TEST_MONTHS]
    val = [(months[m], VAL_HALF) for m in VAL_MONTHS]
    train = [months[m] for m in sorted(set(months) - set(TEST_MONTHS) - set(VAL_MONTHS))]
    return SplitManifest(train_scenes=train, val_regions=val, test_scenes=test,
                         seed=seed, patch_size=patch_size, patches_per_scene=patches_per_scene)


def half_window(shape: tuple[int, int], half: str) -> tuple[int, int, int, int]:
    """(row0, col0, height, width) of one half of a raster."""
    height, width = shape
    if half == "left":
        return 0, 0, height, width // 2
    if half == "right":
        return 0, width // 2, height, width - width // 2
    if half == "top":
        return 0, 0, height // 2, width
    if half == "bottom":
        return height // 2, 0, height - height // 2, width
    raise SplitError(f"unknown half {half!r}")


def region_window(shape: tuple[int, int], half: str | None) -> tuple[int, int, int, int]:
    """Window of ``half`` (or the whole raster when ``half`` is None)."""
    if half is None:
        return 0, 0, shape[0], shape[1]
    return half_window(shape, half)


def sample_patches(scene, labels=None, n: int = DEFAULT_PATCHES_PER_SCENE, seed: int = 0,
                   size: int = DEFAULT_PATCH_SIZE,
                   region: tuple[int, int, int, int] | None = None) -> list[Patch]:
    """Uniformly random patch windows, reproducible per (scene_id, seed).

    ``region`` restricts placement (row0, col0, height, width); windows lie
    fully inside it. Patches containing only ignore pixels are kept; the
    loss masks them.
    """
    scene_id = getattr(scene, "scene_id", "")
    shape = scene.shape if hasattr(scene, "shape") else tuple(scene)
    row0, col0, height, width = region if region is not None else (0, 0, shape[0], shape[1])
    if size > height or size > width:
        raise SamplingError(
            f"scene {scene_id or '?'}: region {height}x{width} smaller than patch size {size}")

    rng = np.random.default_rng((seed, zlib.crc32(scene_id.encode())))
    rows = rng.integers(0, height - size + 1, size=n)
    cols = rng.integers(0, width - size + 1, size=n)
    return [Patch(scene_id, int(row0 + r), int(col0 + c), size) for r, c in zip(rows, cols)]


def save_patch_index(path, patches: list[Patch], seed: int, patch_size: int,
                     patches_per_scene: int) -> None:
    doc = {
        "seed": seed,
        "patch_size": patch_size,
        "patches_per_scene": patches_per_scene,
        "patches": [
            {"scene": p.scene_id, "row0": p.row0, "col0": p.col0, "size": p.size}
            for p in patches
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_patch_index(path) -> list[Patch]:
    doc = json.loads(Path(path).read_text())
    return [Patch(e["scene"], int(e["row0"]), int(e["col0"]), int(e["size"]))
            for e in doc["patches"]]


def _parse_month(scene_id: str) -> int:
    try:
        year, month = scene_id.split("-")
        month = int(month)
        int(year)
    except ValueError as exc:
        raise SplitError(f"scene id {scene_id!r} is not YYYY-MM") from exc
    if not 1 <= month <= 12:
        raise SplitError(f"scene id {scene_id!r} has month outside 1..12")
    return month
