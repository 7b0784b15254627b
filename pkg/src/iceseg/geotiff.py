"""Minimal single-band GeoTIFF reader/writer.

Only the subset of GeoTIFF needed here: one band, north-up grids, pixel
scale + tiepoint georeferencing, GDAL nodata tag and an optional EPSG code.
Heavy geospatial stacks are deliberately avoided; tifffile carries the TIFF
container.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile

__all__ = ["GeoTransform", "GeoRaster", "GeoTiffError", "read_geotiff", "write_geotiff"]

_TAG_PIXEL_SCALE = 33550
_TAG_TIEPOINT = 33922
_TAG_GEO_KEYS = 34735
_TAG_GDAL_NODATA = 42113

_GEOKEY_MODEL_TYPE = 1024
_GEOKEY_PROJECTED_CS = 3072


class GeoTiffError(IOError):
    pass


@dataclass(frozen=True)
class GeoTransform:
    """North-up affine map from pixel indices to projected coordinates.

    ``(x0, y0)`` is the outer corner of pixel (0, 0); ``dy`` is negative for
    the usual row-south orientation.
    """

    x0: float
    y0: float
    dx: float
    dy: float

    def pixel_center(self, row, col):
        return self.x0 + (np.asarray(col) + 0.5) * self.dx, self.y0 + (np.asarray(row) + 0.5) * self.dy

    def translate(self, tx: float, ty: float) -> "GeoTransform":
        return GeoTransform(self.x0 + tx, self.y0 + ty, self.dx, self.dy)

    @property
    def pixel_size(self) -> float:
        return abs(self.dx)


@dataclass
class GeoRaster:
    data: np.ndarray
    transform: GeoTransform
    nodata: float | None = None
    epsg: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def write_geotiff(path, data: np.ndarray, transform: GeoTransform,
                  nodata: float | None = None, epsg: int | None = None) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise GeoTiffError(f"expected a single 2-D band, got shape {data.shape}")
    extratags = [
        (_TAG_PIXEL_SCALE, "d", 3, (abs(transform.dx), abs(transform.dy), 0.0), True),
        (_TAG_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, transform.x0, transform.y0, 0.0), True),
    ]
    if epsg is not None:
        keys = (1, 1, 0, 2, _GEOKEY_MODEL_TYPE, 0, 1, 1, _GEOKEY_PROJECTED_CS, 0, 1, int(epsg))
        extratags.append((_TAG_GEO_KEYS, "H", len(keys), keys, True))
    if nodata is not None:
        extratags.append((_TAG_GDAL_NODATA, "s", 0, _format_nodata(nodata), True))
    tifffile.imwrite(path, data, extratags=extratags)


def read_geotiff(path) -> GeoRaster:
    path = Path(path)
    try:
        with tifffile.TiffFile(path) as tif:
            page = tif.pages[0]
            data = page.asarray()
            values = {code: page.tags[code].value
                      for code in (_TAG_PIXEL_SCALE, _TAG_TIEPOINT, _TAG_GEO_KEYS, _TAG_GDAL_NODATA)
                      if code in page.tags}
    except (FileNotFoundError, tifffile.TiffFileError) as exc:
        raise GeoTiffError(f"{path}: {exc}") from exc
    if data.ndim != 2:
        raise GeoTiffError(f"{path}: expected a single band, got shape {data.shape}")

    if _TAG_PIXEL_SCALE not in values or _TAG_TIEPOINT not in values:
        raise GeoTiffError(f"{path}: missing georeferencing tags")
    sx, sy = values[_TAG_PIXEL_SCALE][0], values[_TAG_PIXEL_SCALE][1]
    col, row, _, x, y, _ = values[_TAG_TIEPOINT][:6]
    # Tiepoint may reference any raster position; shift to pixel (0, 0).
    transform = GeoTransform(x0=x - col * sx, y0=y + row * sy, dx=sx, dy=-sy)

    nodata = float(values[_TAG_GDAL_NODATA]) if _TAG_GDAL_NODATA in values else None
    epsg = _parse_epsg(values[_TAG_GEO_KEYS]) if _TAG_GEO_KEYS in values else None

    return GeoRaster(data=data, transform=transform, nodata=nodata, epsg=epsg)


def write_world_file(path, transform: GeoTransform) -> None:
    """ESRI world file (six lines); georeferences PNG map exports."""
    cx, cy = transform.pixel_center(0, 0)
    lines = [transform.dx, 0.0, 0.0, transform.dy, cx, cy]
    Path(path).write_text("".join(f"{v:.10g}\n" for v in lines))


def _format_nodata(nodata: float) -> str:
    if float(nodata).is_integer():
        return str(int(nodata))
    return repr(float(nodata))


def _parse_epsg(keys) -> int | None:
    # GeoKeyDirectory: 4-entry header then (key, location, count, value) rows.
    keys = list(keys)
    for i in range(4, len(keys) - 3, 4):
        if keys[i] == _GEOKEY_PROJECTED_CS and keys[i + 1] == 0:
            return int(keys[i + 3])
    return None
