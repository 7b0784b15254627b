"""SAR scene ingestion: band loading, normalization, chart rasterization.

A scene is three co-registered single-band GeoTIFFs (HH and HV backscatter
in dB, incidence angle in degrees) resampled onto an 80 m grid. Chart
polygons come in as GeoJSON features carrying the ice-chart concentration
attributes and are burned into a label raster by pixel-center containment.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely
from scipy import ndimage
from shapely.geometry import shape as shapely_shape
from shapely.geometry import mapping as shapely_mapping

from .geotiff import GeoRaster, GeoTransform, read_geotiff, write_geotiff
from .ice_types import IGNORE_VALUE, ChartError, ChartPolygon, IceType, dominant_ice_type

__all__ = [
    "SceneStack",
    "LabelRaster",
    "IngestError",
    "TARGET_PIXEL_SIZE",
    "HH_DB_RANGE",
    "HV_DB_RANGE",
    "INCIDENCE_RANGE",
    "load_scene",
    "normalize",
    "rasterize_labels",
    "read_chart_geojson",
    "write_chart_geojson",
    "scene_band_paths",
    "chart_path",
    "label_path",
]

TARGET_PIXEL_SIZE = 80.0

# Fixed clip-and-scale ranges. Global constants rather than per-scene
# statistics, so inference on a new scene never depends on that scene's
# distribution.
HH_DB_RANGE = (-30.0, 0.0)
HV_DB_RANGE = (-35.0, -5.0)
INCIDENCE_RANGE = (19.0, 47.0)


class IngestError(IOError):
    pass


@dataclass
class SceneStack:
    """Co-registered HH/HV/incidence rasters plus a shared nodata mask."""

    hh: np.ndarray
    hv: np.ndarray
    incidence: np.ndarray
    nodata_mask: np.ndarray
    transform: GeoTransform
    scene_id: str = ""
    epsg: int | None = None

    def __post_init__(self):
        shapes = {b.shape for b in (self.hh, self.hv, self.incidence, self.nodata_mask)}
        if len(shapes) != 1:
            raise IngestError(f"scene bands disagree in shape: {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.hh.shape

    @property
    def pixel_size(self) -> float:
        return self.transform.pixel_size


@dataclass
class LabelRaster:
    """Per-pixel ice-type codes; ``ignore_value`` marks unlabeled pixels."""

    codes: np.ndarray
    transform: GeoTransform
    epsg: int | None = None
    ignore_value: int = IGNORE_VALUE

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    def save(self, path) -> None:
        write_geotiff(path, self.codes.astype(np.uint8), self.transform,
                      nodata=self.ignore_value, epsg=self.epsg)

    @classmethod
    def load(cls, path) -> "LabelRaster":
        raster = read_geotiff(path)
        ignore = IGNORE_VALUE if raster.nodata is None else int(raster.nodata)
        return cls(codes=raster.data.astype(np.uint8), transform=raster.transform,
                   epsg=raster.epsg, ignore_value=ignore)


def load_scene(path_hh, path_hv, path_incidence, scene_id: str = "",
               target_pixel_size: float = TARGET_PIXEL_SIZE) -> SceneStack:
    """Read the three band files and resample them onto the target grid.

    The inputs must already share one grid and projection; resampling is
    bilinear for the continuous bands, with the nodata mask dilated to every
    output pixel an invalid source pixel contributes to.
    """
    paths = [Path(path_hh), Path(path_hv), Path(path_incidence)]
    rasters = [read_geotiff(p) for p in paths]

    ref = rasters[0]
    for path, raster in zip(paths[1:], rasters[1:]):
        if raster.epsg != ref.epsg:
            raise IngestError(f"{path}: projection EPSG:{raster.epsg} does not match EPSG:{ref.epsg}")
        if raster.transform != ref.transform or raster.shape != ref.shape:
            raise IngestError(f"{path}: raster grid does not match {paths[0]}")
    if not _overlaps(ref):
        raise IngestError(f"{paths[0]}: raster extent is empty")

    bands, masks = [], []
    for raster in rasters:
        data = raster.data.astype(np.float32)
        mask = ~np.isfinite(data)
        if raster.nodata is not None:
            mask |= data == raster.nodata
        data = np.where(mask, 0.0, data)
        bands.append(_resample_bilinear(data, raster.transform.pixel_size, target_pixel_size))
        masks.append(_resample_mask(mask, raster.transform.pixel_size, target_pixel_size))

    transform = GeoTransform(ref.transform.x0, ref.transform.y0,
                             target_pixel_size, -target_pixel_size)
    return SceneStack(
        hh=bands[0], hv=bands[1], incidence=bands[2],
        nodata_mask=masks[0] | masks[1] | masks[2],
        transform=transform, scene_id=scene_id, epsg=ref.epsg,
    )


def normalize(stack: SceneStack) -> np.ndarray:
    """Clip-and-scale the bands to [0, 1]; nodata pixels become 0.

    Returns a (3, H, W) float32 array ordered HH, HV, incidence. The
    constants are fixed for every scene, so the mapping is deterministic and
    idempotent under its own inverse.
    """
    out = np.stack([
        _scale(stack.hh, *HH_DB_RANGE),
        _scale(stack.hv, *HV_DB_RANGE),
        _scale(stack.incidence, *INCIDENCE_RANGE),
    ])
    out[:, stack.nodata_mask] = 0.0
    return out


def rasterize_labels(polygons: list[ChartPolygon], grid: SceneStack) -> LabelRaster:
    """Burn dominant ice types onto the grid by pixel-center containment.

    Pixel centers on a polygon edge count as inside. Charts are expected
    non-overlapping; where polygons do overlap, the later polygon in input
    order wins.
    """
    height, width = grid.shape
    codes = np.full((height, width), IGNORE_VALUE, dtype=np.uint8)
    if not polygons:
        warnings.warn("no chart polygons supplied; label raster is all-ignore")
        return LabelRaster(codes, grid.transform, epsg=grid.epsg)

    transform = grid.transform
    xs = transform.x0 + (np.arange(width) + 0.5) * transform.dx
    ys = transform.y0 + (np.arange(height) + 0.5) * transform.dy
    for polygon in polygons:
        value = int(dominant_ice_type(polygon))
        geom = polygon.geometry
        r0, r1, c0, c1 = _bounds_window(geom.bounds, xs, ys)
        if r0 >= r1 or c0 >= c1:
            continue
        gx, gy = np.meshgrid(xs[c0:c1], ys[r0:r1])
        shapely.prepare(geom)
        hit = shapely.intersects_xy(geom, gx.ravel(), gy.ravel()).reshape(gy.shape)
        codes[r0:r1, c0:c1][hit] = value
    return LabelRaster(codes, transform, epsg=grid.epsg)


def read_chart_geojson(path) -> list[ChartPolygon]:
    """Parse a chart FeatureCollection into validated ChartPolygon records."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"{path}: {exc}") from exc
    features = doc.get("features")
    if doc.get("type") != "FeatureCollection" or features is None:
        raise IngestError(f"{path}: not a GeoJSON FeatureCollection")

    polygons = []
    for index, feature in enumerate(features):
        try:
            polygons.append(_feature_to_polygon(feature))
        except (ChartError, KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"{path}: feature {index}: {exc}") from exc
    return polygons


def write_chart_geojson(path, polygons: list[ChartPolygon]) -> None:
    features = []
    for polygon in polygons:
        properties = {"ct": polygon.ct, "is_water": polygon.is_water}
        if polygon.sa is not None:
            properties["sa"] = int(polygon.sa)
            if polygon.ca is not None:
                properties["ca"] = polygon.ca
        if polygon.sb is not None:
            properties["sb"] = int(polygon.sb)
            properties["cb"] = polygon.cb
        features.append({
            "type": "Feature",
            "geometry": shapely_mapping(polygon.geometry),
            "properties": properties,
        })
    doc = {"type": "FeatureCollection", "features": features}
    Path(path).write_text(json.dumps(doc))


def scene_band_paths(data_dir, scene_id: str) -> tuple[Path, Path, Path]:
    """HH/HV/incidence file locations under the ``YYYY-MM_<band>.tif`` convention."""
    data_dir = Path(data_dir)
    return (data_dir / f"{scene_id}_hh.tif",
            data_dir / f"{scene_id}_hv.tif",
            data_dir / f"{scene_id}_ia.tif")


def chart_path(data_dir, scene_id: str) -> Path:
    return Path(data_dir) / f"{scene_id}_chart.geojson"


def label_path(prepared_dir, scene_id: str) -> Path:
    return Path(prepared_dir) / f"{scene_id}_labels.tif"


def load_scene_by_id(data_dir, scene_id: str,
                     target_pixel_size: float = TARGET_PIXEL_SIZE) -> SceneStack:
    hh, hv, ia = scene_band_paths(data_dir, scene_id)
    for path in (hh, hv, ia):
        if not path.exists():
            raise IngestError(f"scene {scene_id}: missing band file {path}")
    return load_scene(hh, hv, ia, scene_id=scene_id, target_pixel_size=target_pixel_size)


def _feature_to_polygon(feature: dict) -> ChartPolygon:
    geometry = shapely_shape(feature["geometry"])
    if geometry.geom_type not in ("Polygon", "MultiPolygon"):
        raise ChartError(f"unsupported geometry type {geometry.geom_type}")
    properties = feature.get("properties") or {}
    return ChartPolygon(
        geometry=geometry,
        ct=int(properties.get("ct", 0)),
        sa=_opt_ice_type(properties.get("sa")),
        ca=properties.get("ca"),
        sb=_opt_ice_type(properties.get("sb")),
        cb=properties.get("cb"),
        is_water=bool(properties.get("is_water", False)),
    )


def _opt_ice_type(code) -> IceType | None:
    return None if code is None else IceType(int(code))


def _scale(band: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return ((np.clip(band, lo, hi) - lo) / (hi - lo)).astype(np.float32)


def _overlaps(raster: GeoRaster) -> bool:
    height, width = raster.shape
    return height > 0 and width > 0


def _resample_bilinear(data: np.ndarray, src_pixel: float, dst_pixel: float) -> np.ndarray:
    if src_pixel == dst_pixel:
        return data.astype(np.float32)
    rows, cols = _output_grid(data.shape, src_pixel, dst_pixel)
    coords = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(data, coords, order=1, mode="nearest").astype(np.float32)


def _resample_mask(mask: np.ndarray, src_pixel: float, dst_pixel: float) -> np.ndarray:
    if src_pixel == dst_pixel:
        return mask.copy()
    rows, cols = _output_grid(mask.shape, src_pixel, dst_pixel)
    coords = np.meshgrid(rows, cols, indexing="ij")
    # Any nodata contribution to the bilinear footprint poisons the pixel.
    fraction = ndimage.map_coordinates(mask.astype(np.float32), coords, order=1, mode="nearest")
    return fraction > 1e-6


def _output_grid(shape, src_pixel: float, dst_pixel: float):
    height, width = shape
    out_h = max(1, round(height * src_pixel / dst_pixel))
    out_w = max(1, round(width * src_pixel / dst_pixel))
    scale = dst_pixel / src_pixel
    rows = (np.arange(out_h) + 0.5) * scale - 0.5
    cols = (np.arange(out_w) + 0.5) * scale - 0.5
    return rows, cols


def _bounds_window(bounds, xs: np.ndarray, ys: np.ndarray):
    minx, miny, maxx, maxy = bounds
    cols = np.nonzero((xs >= minx) & (xs <= maxx))[0]
    rows = np.nonzero((ys >= min(miny, maxy)) & (ys <= max(miny, maxy)))[0]
    if cols.size == 0 or rows.size == 0:
        return 0, 0, 0, 0
    return rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
