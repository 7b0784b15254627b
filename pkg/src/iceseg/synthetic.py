"""Synthetic SAR-like scenes with matching charts, for desk-scale pipelines.

Scenes are partitioned into rectangular regions (guillotine cuts on pixel
boundaries), one ice type per region. Backscatter is Gaussian in dB around
per-class means separated well enough that the classes are learnable; the
incidence band is a west-to-east linear ramp. The same GeoTIFF/GeoJSON
formats the ingest side consumes are written, so the whole pipeline can be
exercised without the real dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon

from .geotiff import GeoTransform, write_geotiff
from .ice_types import IGNORE_VALUE, ChartPolygon, IceType
from .ingest import (INCIDENCE_RANGE, LabelRaster, SceneStack, chart_path,
                     rasterize_labels, scene_band_paths, write_chart_geojson)

__all__ = [
    "SynthSpec",
    "SynthSpecError",
    "generate",
    "default_band_stats",
    "guillotine_regions",
    "write_scene_files",
    "make_monthly_dataset",
]

NODATA = -9999.0
DEFAULT_EPSG = 32631


class SynthSpecError(ValueError):
    pass


def default_band_stats() -> tuple[dict, dict]:
    """Per-class (mean dB, std dB) for HH and HV; adjacent means 4 dB apart."""
    hh = {t: (-22.0 + 4.0 * int(t), 1.0) for t in IceType}
    hv = {t: (mean - 7.0, std) for t, (mean, std) in hh.items()}
    return hh, hv


@dataclass
class SynthSpec:
    shape: tuple[int, int] = (512, 512)
    seed: int = 0
    regions: list[tuple[Polygon, IceType]] = field(default_factory=list)
    hh_stats: dict = field(default_factory=lambda: default_band_stats()[0])
    hv_stats: dict = field(default_factory=lambda: default_band_stats()[1])
    incidence_range: tuple[float, float] = INCIDENCE_RANGE
    pixel_size: float = 80.0
    origin: tuple[float, float] = (0.0, 0.0)  # x0, then y0 is derived north-up
    epsg: int = DEFAULT_EPSG
    nodata_corner: int = 0  # side length in pixels of a nodata square at (0, 0)

    @property
    def transform(self) -> GeoTransform:
        x0, y_base = self.origin
        return GeoTransform(x0, y_base + self.shape[0] * self.pixel_size,
                            self.pixel_size, -self.pixel_size)

    def validate(self) -> None:
        if not self.regions:
            raise SynthSpecError("spec has no regions")
        polys = [geom for geom, _ in self.regions]
        for i in range(len(polys)):
            for j in range(i + 1, len(polys)):
                if polys[i].intersection(polys[j]).area > 1e-6:
                    raise SynthSpecError(f"regions {i} and {j} overlap")
        for name, stats in (("hh", self.hh_stats), ("hv", self.hv_stats)):
            types = sorted(stats, key=int)
            for a, b in zip(types, types[1:]):
                gap = abs(stats[a][0] - stats[b][0])
                sigma = max(stats[a][1], stats[b][1])
                if gap < 2.0 * sigma:
                    raise SynthSpecError(
                        f"{name} means of {a.name} and {b.name} closer than 2 sigma")


def guillotine_regions(shape: tuple[int, int], n_regions: int = 14,
                       seed: int = 0, pixel_size: float = 80.0,
                       origin: tuple[float, float] = (0.0, 0.0),
                       min_side: int = 40) -> list[tuple[Polygon, IceType]]:
    """Partition the scene into rectangles on pixel boundaries.

    Cuts land on integer pixel edges, so pixel centers are never ambiguous.
    The first five rectangles get the five classes in shuffled order; any
    further ones draw randomly, so every class occurs when n_regions >= 5.
    """
    height, width = shape
    rng = np.random.default_rng(seed)
    rects = [(0, 0, height, width)]
    while len(rects) < n_regions:
        areas = [h * w for _, _, h, w in rects]
        index = int(np.argmax(areas))
        r0, c0, h, w = rects.pop(index)
        if max(h, w) < 2 * min_side:
            rects.append((r0, c0, h, w))
            break
        if h >= w:
            cut = int(rng.integers(min_side, h - min_side + 1))
            rects += [(r0, c0, cut, w), (r0 + cut, c0, h - cut, w)]
        else:
            cut = int(rng.integers(min_side, w - min_side + 1))
            rects += [(r0, c0, h, cut), (r0, c0 + cut, h, w - cut)]

    types = list(IceType)
    rng.shuffle(types)
    assigned = [types[i] if i < len(types) else IceType(int(rng.integers(0, len(IceType))))
                for i in range(len(rects))]

    x0, y_base = origin
    y_top = y_base + height * pixel_size
    regions = []
    for (r0, c0, h, w), ice_type in zip(rects, assigned):
        xs = (x0 + c0 * pixel_size, x0 + (c0 + w) * pixel_size)
        ys = (y_top - r0 * pixel_size, y_top - (r0 + h) * pixel_size)
        geom = Polygon([(xs[0], ys[0]), (xs[1], ys[0]), (xs[1], ys[1]), (xs[0], ys[1])])
        regions.append((geom, ice_type))
    return regions


def generate(spec: SynthSpec) -> tuple[SceneStack, list[ChartPolygon], LabelRaster]:
    """Scene bands, chart polygons and the ground-truth label raster."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    height, width = spec.shape
    transform = spec.transform

    polygons = [_region_to_chart(geom, ice_type, rng) for geom, ice_type in spec.regions]

    grid = _empty_stack(spec, transform)
    truth = rasterize_labels(polygons, grid)
    codes = truth.codes

    hh_mean, hh_std = _stat_tables(spec.hh_stats)
    hv_mean, hv_std = _stat_tables(spec.hv_stats)
    # Unlabeled pixels (none when the regions tile the scene) read as water.
    safe = np.where(codes == IGNORE_VALUE, 0, codes)
    hh = hh_mean[safe] + hh_std[safe] * rng.standard_normal((height, width))
    hv = hv_mean[safe] + hv_std[safe] * rng.standard_normal((height, width))
    lo, hi = spec.incidence_range
    incidence = np.broadcast_to(lo + (np.arange(width) + 0.5) / width * (hi - lo),
                                (height, width)).copy()

    mask = np.zeros((height, width), dtype=bool)
    if spec.nodata_corner > 0:
        mask[:spec.nodata_corner, :spec.nodata_corner] = True

    stack = SceneStack(hh=hh.astype(np.float32), hv=hv.astype(np.float32),
                       incidence=incidence.astype(np.float32), nodata_mask=mask,
                       transform=transform, epsg=spec.epsg)
    return stack, polygons, truth


def write_scene_files(stack: SceneStack, polygons: list[ChartPolygon],
                      data_dir, scene_id: str) -> None:
    """Persist a scene in the exact formats the ingest side reads back."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    paths = scene_band_paths(data_dir, scene_id)
    for path, band in zip(paths, (stack.hh, stack.hv, stack.incidence)):
        data = band.astype(np.float32).copy()
        data[stack.nodata_mask] = NODATA
        write_geotiff(path, data, stack.transform, nodata=NODATA, epsg=stack.epsg)
    write_chart_geojson(chart_path(data_dir, scene_id), polygons)


def make_monthly_dataset(data_dir, year: int = 2018, shape: tuple[int, int] = (512, 512),
                         seed: int = 0, n_regions: int = 14,
                         nodata_corner: int = 0) -> list[str]:
    """Twelve monthly synthetic scenes plus charts under the CLI naming scheme."""
    scene_ids = []
    for month in range(1, 13):
        scene_id = f"{year}-{month:02d}"
        scene_seed = seed * 1000 + month
        spec = SynthSpec(shape=shape, seed=scene_seed,
                         regions=guillotine_regions(shape, n_regions, seed=scene_seed),
                         nodata_corner=nodata_corner)
        stack, polygons, _ = generate(spec)
        stack.scene_id = scene_id
        write_scene_files(stack, polygons, data_dir, scene_id)
        scene_ids.append(scene_id)
    return scene_ids


def _region_to_chart(geom: Polygon, ice_type: IceType, rng: np.random.Generator) -> ChartPolygon:
    if ice_type == IceType.WATER:
        return ChartPolygon(geometry=geom, ct=0, is_water=True)
    ca = int(rng.integers(6, 10))
    # Mix single-type polygons with two-type ones whose second entry is the
    # next-younger stage at strictly lower concentration, so the dominant
    # type always equals the region's class.
    if int(ice_type) >= 2 and rng.random() < 0.5:
        cb = int(rng.integers(1, min(10 - ca, ca - 1) + 1))
        return ChartPolygon(geometry=geom, ct=ca + cb, sa=ice_type, ca=ca,
                            sb=IceType(int(ice_type) - 1), cb=cb)
    return ChartPolygon(geometry=geom, ct=ca, sa=ice_type, ca=ca)


def _stat_tables(stats: dict) -> tuple[np.ndarray, np.ndarray]:
    means = np.zeros(len(IceType))
    stds = np.ones(len(IceType))
    for ice_type, (mean, std) in stats.items():
        means[int(ice_type)] = mean
        stds[int(ice_type)] = std
    return means, stds


def _empty_stack(spec: SynthSpec, transform: GeoTransform) -> SceneStack:
    zero = np.zeros(spec.shape, dtype=np.float32)
    return SceneStack(hh=zero, hv=zero, incidence=zero,
                      nodata_mask=np.zeros(spec.shape, dtype=bool),
                      transform=transform, epsg=spec.epsg)
