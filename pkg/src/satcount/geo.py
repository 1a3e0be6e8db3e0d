"""Geographic and pixel geometry primitives.

Boxes, IoU, meter-based expansion, and the geo/pixel mapping. Geographic
math uses a local equirectangular approximation (111320 m per degree of
latitude, scaled by cos(lat) for longitude), which is accurate to well
under a pixel at the city-block extents this package deals with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import EmptyBoundary, PolarUnsupported

METERS_PER_DEGREE = 111_320.0


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class GeoBox:
    """Axis-aligned geographic extent. Antimeridian-crossing boxes are rejected."""

    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def __post_init__(self):
        GeoPoint(self.min_lat, self.min_lon)
        GeoPoint(self.max_lat, self.max_lon)
        if self.min_lat > self.max_lat or self.min_lon > self.max_lon:
            raise ValueError(f"inverted GeoBox {self}")

    @property
    def mid_lat(self) -> float:
        return (self.min_lat + self.max_lat) / 2.0

    @property
    def center(self) -> GeoPoint:
        return GeoPoint(self.mid_lat, (self.min_lon + self.max_lon) / 2.0)

    def intersects(self, other: "GeoBox") -> bool:
        return not (
            self.max_lat < other.min_lat
            or other.max_lat < self.min_lat
            or self.max_lon < other.min_lon
            or other.max_lon < self.min_lon
        )

    def contains(self, other: "GeoBox") -> bool:
        return (
            self.min_lat <= other.min_lat
            and self.min_lon <= other.min_lon
            and self.max_lat >= other.max_lat
            and self.max_lon >= other.max_lon
        )


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned box in continuous pixel coordinates.

    (x1, y1) is the upper-left corner and (x2, y2) the bottom-right one;
    coordinates are continuous because fused boxes have fractional corners.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"non-finite PixelBox coordinate in {self}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted PixelBox {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class GeoTransform:
    """Maps pixel coordinates to geography.

    origin is the geographic position of the top-left pixel center; gsd_x
    and gsd_y are the ground sample distances in meters per pixel.
    """

    origin: GeoPoint
    gsd_x: float
    gsd_y: float

    def __post_init__(self):
        for g in (self.gsd_x, self.gsd_y):
            if not (math.isfinite(g) and g > 0):
                raise ValueError(f"ground sample distance must be finite and positive, got {g}")

    @property
    def gsd(self) -> float:
        """Common GSD for square-pixel transforms."""
        if abs(self.gsd_x - self.gsd_y) > 1e-12 * max(self.gsd_x, self.gsd_y):
            raise ValueError(f"pixels are not square: gsd_x={self.gsd_x}, gsd_y={self.gsd_y}")
        return self.gsd_x


def enclosing_geobox(points: Sequence[GeoPoint] | Iterable[GeoPoint]) -> GeoBox:
    """Smallest box containing all points (componentwise min/max)."""
    pts = list(points)
    if not pts:
        raise EmptyBoundary("cannot compute the enclosing box of zero points")
    return GeoBox(
        min_lat=min(p.lat for p in pts),
        min_lon=min(p.lon for p in pts),
        max_lat=max(p.lat for p in pts),
        max_lon=max(p.lon for p in pts),
    )


def expand_geobox(box: GeoBox, m: float) -> GeoBox:
    """Grow a box by m meters on every side.

    Latitude grows by m / 111320 degrees and longitude by the same amount
    divided by cos of the box's mid-latitude. The result is clamped to
    valid coordinate ranges.
    """
    if m < 0:
        raise ValueError(f"expansion distance must be >= 0, got {m}")
    if abs(box.mid_lat) >= 89.9:
        raise PolarUnsupported(f"mid-latitude {box.mid_lat} is too close to a pole")
    dlat = m / METERS_PER_DEGREE
    dlon = m / (METERS_PER_DEGREE * math.cos(math.radians(box.mid_lat)))
    return GeoBox(
        min_lat=max(-90.0, box.min_lat - dlat),
        min_lon=max(-180.0, box.min_lon - dlon),
        max_lat=min(90.0, box.max_lat + dlat),
        max_lon=min(180.0, box.max_lon + dlon),
    )


def geo_to_pixel(t: GeoTransform, p: GeoPoint) -> tuple[float, float]:
    """Continuous pixel coordinates of a geographic point."""
    cos_lat = math.cos(math.radians(t.origin.lat))
    x = (p.lon - t.origin.lon) * METERS_PER_DEGREE * cos_lat / t.gsd_x
    y = (t.origin.lat - p.lat) * METERS_PER_DEGREE / t.gsd_y
    return (x, y)


def pixel_to_geo(t: GeoTransform, x: float, y: float) -> GeoPoint:
    """Inverse of geo_to_pixel."""
    cos_lat = math.cos(math.radians(t.origin.lat))
    lon = t.origin.lon + x * t.gsd_x / (METERS_PER_DEGREE * cos_lat)
    lat = t.origin.lat - y * t.gsd_y / METERS_PER_DEGREE
    return GeoPoint(lat, lon)


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection area over union area; 0 for disjoint or degenerate pairs."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union
