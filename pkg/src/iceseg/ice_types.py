"""Sea-ice type taxonomy and dominant-type derivation from ice-chart polygons.

Ice charts describe each polygon by its oldest ice type (``sa``), second
oldest type (``sb``) and their partial concentrations in tenths (``ca``,
``cb``). The per-polygon training target is the type with the highest
partial concentration; development stage breaks ties (older wins, because
calling old ice something younger is the dangerous mistake).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from shapely.geometry.base import BaseGeometry

__all__ = [
    "IceType",
    "ChartPolygon",
    "ChartError",
    "IGNORE_VALUE",
    "dominant_ice_type",
    "class_frequencies",
]

# Label code for pixels outside every chart polygon (land, unlabeled ocean).
# Chosen outside the class-code range so losses and metrics can mask on it.
IGNORE_VALUE = 255


class IceType(IntEnum):
    """The five ice-type categories, ordered by development stage."""

    WATER = 0
    NEW_ICE = 1
    YOUNG_ICE = 2
    FIRST_YEAR_ICE = 3
    OLD_ICE = 4

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]


_DISPLAY_NAMES = {
    IceType.WATER: "Water",
    IceType.NEW_ICE: "New ice",
    IceType.YOUNG_ICE: "Young ice",
    IceType.FIRST_YEAR_ICE: "First-year ice",
    IceType.OLD_ICE: "Old ice",
}

NUM_CLASSES = len(IceType)


class ChartError(ValueError):
    """Malformed ice-chart record."""


def _check_tenths(name: str, value) -> int:
    if isinstance(value, float) and not value.is_integer():
        raise ChartError(f"{name}={value!r}: concentrations are integer tenths, not rounded")
    value = int(value)
    if not 0 < value <= 10:
        raise ChartError(f"{name}={value} outside 1..10 tenths")
    return value


@dataclass(frozen=True)
class ChartPolygon:
    """One ice-chart polygon with its concentration attributes.

    ``geometry`` is in scene projection coordinates (meters). ``sa``/``sb``
    are the oldest and second-oldest ice types present; ``ca``/``cb`` their
    partial concentrations in tenths. Water polygons carry no type
    attributes at all.
    """

    geometry: BaseGeometry
    ct: int = 0
    sa: IceType | None = None
    ca: int | None = None
    sb: IceType | None = None
    cb: int | None = None
    is_water: bool = False

    def __post_init__(self):
        if self.geometry is not None:
            if self.geometry.is_empty or self.geometry.area <= 0:
                raise ChartError("polygon geometry has no area")
            if not self.geometry.is_valid:
                raise ChartError("polygon geometry is not simple (self-intersecting?)")
        if self.is_water:
            if any(v is not None for v in (self.sa, self.ca, self.sb, self.cb)):
                raise ChartError("water polygon must not carry ice-type attributes")
            return
        if self.sb is not None and self.sa is None:
            # Normalize single-type polygons into the first slot.
            object.__setattr__(self, "sa", self.sb)
            object.__setattr__(self, "ca", self.cb)
            object.__setattr__(self, "sb", None)
            object.__setattr__(self, "cb", None)
        if self.ca is not None:
            object.__setattr__(self, "ca", _check_tenths("ca", self.ca))
        if self.cb is not None:
            object.__setattr__(self, "cb", _check_tenths("cb", self.cb))
        if self.sb is not None:
            if self.ca is None or self.cb is None:
                raise ChartError("two-type polygon needs both partial concentrations")
            if self.ca + self.cb > 10:
                raise ChartError(f"partial concentrations exceed total: ca+cb={self.ca + self.cb}")


def dominant_ice_type(polygon: ChartPolygon) -> IceType:
    """Type with the highest partial concentration; older type wins ties."""
    if polygon.is_water:
        return IceType.WATER
    if polygon.sa is None:
        raise ChartError("polygon carries no ice type and is not water")
    if polygon.sb is None:
        return polygon.sa
    # Ties go to the higher development stage (max over (conc, stage)).
    _, winner = max(
        (polygon.ca, polygon.sa),
        (polygon.cb, polygon.sb),
        key=lambda pair: (pair[0], pair[1]),
    )
    return winner


def class_frequencies(codes: np.ndarray, ignore_value: int = IGNORE_VALUE) -> dict[IceType, int]:
    """Pixel count per ice type, skipping ignored pixels and absent classes."""
    codes = np.asarray(codes)
    valid = codes[codes != ignore_value]
    bad = valid[(valid < 0) | (valid >= NUM_CLASSES)]
    if bad.size:
        raise ValueError(f"label raster contains invalid code {int(bad.flat[0])}")
    counts = np.bincount(valid.astype(np.int64).ravel(), minlength=NUM_CLASSES)
    return {IceType(k): int(n) for k, n in enumerate(counts) if n > 0}
