"""OpenStreetMap extract handling: parse, tag-filter, emit ROI descriptors.

Works on offline OSM XML v0.6 extracts (node/way/tag/nd subset). Ways are
resolved through their node references; tagged nodes become single-point
features. Relations are not assembled.
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import EmptyFilter, ParseFailure
from .geo import GeoBox, GeoPoint, enclosing_geobox, expand_geobox

logger = logging.getLogger(__name__)

# places with high people circulation, the default sampling targets
DEFAULT_TAG_FILTER: tuple[tuple[str, str], ...] = (
    ("shop", "supermarket"),
    ("aeroway", "aerodrome"),
    ("amenity", "hospital"),
    ("amenity", "university"),
    ("amenity", "school"),
    ("shop", "mall"),
    ("amenity", "place_of_worship"),
)

DEFAULT_EXPAND_METERS = 100.0

# fewer points cannot delimit an area, so such features have no usable contour
MIN_BOUNDARY_POINTS = 3


@dataclass(frozen=True)
class OsmFeature:
    id: int
    tags: tuple[tuple[str, str], ...]
    boundary: tuple[GeoPoint, ...]


@dataclass(frozen=True)
class TagFilter:
    entries: tuple[tuple[str, str], ...] = DEFAULT_TAG_FILTER

    def matches(self, tags: Iterable[tuple[str, str]]) -> str | None:
        """First filter entry present in `tags`, as "key=value", else None."""
        tag_set = set(tags)
        for key, value in self.entries:
            if (key, value) in tag_set:
                return f"{key}={value}"
        return None


@dataclass(frozen=True)
class RoiDescriptor:
    roi_id: str
    source_feature: int
    tag_group: str
    geo: GeoBox


def _byte_offset(data: bytes, line: int, column: int) -> int:
    """Translate a 1-based (line, column) parser position into a byte offset."""
    lines = data.split(b"\n")
    offset = sum(len(l) + 1 for l in lines[: line - 1])
    return offset + column


def parse_osm_xml(data: bytes) -> list[OsmFeature]:
    """Features from an OSM XML extract, in document order.

    Tagged nodes yield single-point features; ways yield features whose
    boundary follows the <nd ref> order. References to missing nodes are
    skipped and counted in a single log warning. Unknown elements are
    ignored.
    """
    try:
        root = ET.fromstring(data)
    except ET.ParseError as e:
        line, column = e.position
        raise ParseFailure(str(e), byte_offset=_byte_offset(data, line, column)) from e

    node_coords: dict[int, GeoPoint] = {}
    for node in root.iter("node"):
        try:
            node_coords[int(node.get("id"))] = GeoPoint(float(node.get("lat")), float(node.get("lon")))
        except (TypeError, ValueError) as e:
            raise ParseFailure(f"bad node element: {e}") from e

    features: list[OsmFeature] = []
    unresolved = 0
    for elem in root:
        if elem.tag == "node":
            tags = _element_tags(elem)
            if not tags:
                continue
            point = node_coords[int(elem.get("id"))]
            features.append(OsmFeature(id=int(elem.get("id")), tags=tags, boundary=(point,)))
        elif elem.tag == "way":
            boundary = []
            for nd in elem.findall("nd"):
                try:
                    ref = int(nd.get("ref"))
                except (TypeError, ValueError) as e:
                    raise ParseFailure(f"bad nd element: {e}") from e
                if ref in node_coords:
                    boundary.append(node_coords[ref])
                else:
                    unresolved += 1
            try:
                way_id = int(elem.get("id"))
            except (TypeError, ValueError) as e:
                raise ParseFailure(f"way without usable id: {e}") from e
            features.append(OsmFeature(id=way_id, tags=_element_tags(elem), boundary=tuple(boundary)))
    if unresolved:
        logger.warning("skipped %d unresolved <nd> references", unresolved)
    return features


def _element_tags(elem: ET.Element) -> tuple[tuple[str, str], ...]:
    return tuple((t.get("k", ""), t.get("v", "")) for t in elem.findall("tag"))


def filter_strategic(features: Iterable[OsmFeature], tag_filter: TagFilter) -> list[OsmFeature]:
    """Features carrying at least one filter tag, input order preserved."""
    if not tag_filter.entries:
        raise EmptyFilter("tag filter has no entries")
    return [f for f in features if tag_filter.matches(f.tags) is not None]


def sample_locations(
    aoi: GeoBox,
    features: Iterable[OsmFeature],
    tag_filter: TagFilter = TagFilter(),
    m: float = DEFAULT_EXPAND_METERS,
) -> list[RoiDescriptor]:
    """ROI descriptors for strategic features with a boundary contour.

    A feature qualifies when a filter tag matches, its boundary has at
    least three points, and its enclosing box intersects the area of
    interest. The emitted box is the enclosing box expanded by m meters.
    """
    if m < 0:
        raise ValueError(f"expansion distance must be >= 0, got {m}")
    out = []
    skipped = 0
    for feat in filter_strategic(features, tag_filter):
        if len(feat.boundary) < MIN_BOUNDARY_POINTS:
            skipped += 1
            continue
        raw_box = enclosing_geobox(feat.boundary)
        if not raw_box.intersects(aoi):
            skipped += 1
            continue
        tag_group = tag_filter.matches(feat.tags)
        out.append(
            RoiDescriptor(
                roi_id=f"{tag_group}/{feat.id}",
                source_feature=feat.id,
                tag_group=tag_group,
                geo=expand_geobox(raw_box, m),
            )
        )
    if skipped:
        logger.info("skipped %d strategic features (no contour or outside the AOI)", skipped)
    return out


def write_roi_descriptors(path: str | Path, rois: Iterable[RoiDescriptor]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for roi in rois:
            fh.write(
                json.dumps(
                    {
                        "roi_id": roi.roi_id,
                        "feature": roi.source_feature,
                        "tag_group": roi.tag_group,
                        "min_lat": roi.geo.min_lat,
                        "min_lon": roi.geo.min_lon,
                        "max_lat": roi.geo.max_lat,
                        "max_lon": roi.geo.max_lon,
                    }
                )
                + "\n"
            )


def read_roi_descriptors(path: str | Path) -> list[RoiDescriptor]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(
                RoiDescriptor(
                    roi_id=obj["roi_id"],
                    source_feature=int(obj["feature"]),
                    tag_group=obj["tag_group"],
                    geo=GeoBox(obj["min_lat"], obj["min_lon"], obj["max_lat"], obj["max_lon"]),
                )
            )
    return out
