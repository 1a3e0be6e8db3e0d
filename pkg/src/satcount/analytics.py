"""Counting, temporal change magnitudes, indicator rules, and heatmaps.

Trend detection is deliberately simple: first-to-last difference with a
dead band, because a handful of acquisitions cannot support anything
fancier. Change magnitude classes (small/medium/large) are cut at
configurable count deltas.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .detect import DetectionSet
from .errors import InsufficientHistory, NoSamples
from .geo import METERS_PER_DEGREE, GeoBox, GeoPoint
from .osm import RoiDescriptor
from .raster import Raster, write_png
from .registry import DEFAULT_REGISTRY, ClassRegistry

DEFAULT_VARIATION_THRESHOLDS = (30, 150)  # delta <= 30 small, <= 150 medium, else large

TRENDS = ("increase", "decrease", "stable")
VARIATIONS = ("small", "medium", "large")


@dataclass(frozen=True)
class CountRecord:
    roi_id: str
    timestamp: str
    class_id: int
    count: int


@dataclass(frozen=True)
class TimeSeries:
    roi_id: str
    class_id: int
    points: tuple[tuple[str, int], ...]

    def __post_init__(self):
        stamps = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise ValueError(f"timestamps must be strictly increasing, got {stamps}")

    @property
    def counts(self) -> list[int]:
        return [c for _, c in self.points]


@dataclass(frozen=True)
class ChangeReport:
    roi_id: str
    class_id: int
    min_count: int
    max_count: int
    delta: int
    variation_class: str
    trend: str


@dataclass(frozen=True)
class IndicatorRule:
    """Expected temporal behavior for one strategic-location group."""

    tag_group: str
    expected_trend: str
    alert_on: frozenset[str]

    def __post_init__(self):
        if self.expected_trend not in TRENDS:
            raise ValueError(f"unknown trend {self.expected_trend!r}")
        if not self.alert_on <= set(TRENDS):
            raise ValueError(f"unknown trends in alert_on: {sorted(self.alert_on)}")
        if self.expected_trend in self.alert_on:
            raise ValueError("expected_trend cannot also be an alert trend")


@dataclass(frozen=True)
class IndicatorStatus:
    roi_id: str
    class_id: int
    trend: str
    status: str  # "ok" | "alert"
    rule: IndicatorRule | None


@dataclass(frozen=True)
class HeatmapGrid:
    geo: GeoBox
    rows: int
    cols: int
    values: tuple[float, ...]

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if len(self.values) != self.rows * self.cols:
            raise ValueError(f"{len(self.values)} values for a {self.rows}x{self.cols} grid")


def count_by_class(ds: DetectionSet) -> list[CountRecord]:
    """Region multiplicity per class; zero-count classes are omitted."""
    tally = Counter(r.class_id for r in ds.regions)
    return [
        CountRecord(roi_id=ds.roi_id, timestamp=ds.timestamp, class_id=cid, count=n)
        for cid, n in sorted(tally.items())
    ]


def sort_samples(series: Sequence[tuple[str, int]]) -> list[tuple[str, int]]:
    """Stable ascending reorder by count (labels ride along)."""
    return sorted(series, key=lambda lc: lc[1])


def build_time_series(records: Iterable[CountRecord]) -> list[TimeSeries]:
    """Group count records into per-(roi, class) series.

    Timestamps missing for one class but present for the ROI elsewhere
    are filled with zero counts, so an acquisition that saw none of a
    class still contributes a point.
    """
    by_roi_stamps: dict[str, set[str]] = {}
    by_key: dict[tuple[str, int], dict[str, int]] = {}
    for rec in records:
        by_roi_stamps.setdefault(rec.roi_id, set()).add(rec.timestamp)
        by_key.setdefault((rec.roi_id, rec.class_id), {})[rec.timestamp] = rec.count
    out = []
    for (roi_id, class_id) in sorted(by_key, key=lambda k: (k[0], k[1])):
        counts = by_key[(roi_id, class_id)]
        points = tuple(
            (ts, counts.get(ts, 0)) for ts in sorted(by_roi_stamps[roi_id])
        )
        out.append(TimeSeries(roi_id=roi_id, class_id=class_id, points=points))
    return out


def change_report(
    ts: TimeSeries, thresholds: tuple[int, int] = DEFAULT_VARIATION_THRESHOLDS
) -> ChangeReport:
    """Spread and first-to-last trend of one count series.

    delta = max - min. Variation class cuts at the two thresholds; trend
    is stable while |last - first| stays within the small cut.
    """
    small_max, medium_max = thresholds
    if small_max < 0 or medium_max < small_max:
        raise ValueError(f"bad variation thresholds ({small_max}, {medium_max})")
    if len(ts.points) < 2:
        raise InsufficientHistory(
            f"series {ts.roi_id}/{ts.class_id} has {len(ts.points)} point(s), need >= 2"
        )
    counts = ts.counts
    delta = max(counts) - min(counts)
    if delta <= small_max:
        variation = "small"
    elif delta <= medium_max:
        variation = "medium"
    else:
        variation = "large"
    endpoint_shift = counts[-1] - counts[0]
    if abs(endpoint_shift) <= small_max:
        trend = "stable"
    else:
        trend = "increase" if endpoint_shift > 0 else "decrease"
    return ChangeReport(
        roi_id=ts.roi_id,
        class_id=ts.class_id,
        min_count=min(counts),
        max_count=max(counts),
        delta=delta,
        variation_class=variation,
        trend=trend,
    )


def evaluate_indicators(
    reports: Iterable[ChangeReport],
    rois: Iterable[RoiDescriptor],
    rules: Iterable[IndicatorRule],
) -> list[IndicatorStatus]:
    """Match each change report against the rules for its ROI's tag group.

    An observed trend listed in a rule's alert_on flags an alert; ROIs
    without a matching rule report ok with no rule attached.
    """
    group_of_roi = {r.roi_id: r.tag_group for r in rois}
    rules_by_group: dict[str, list[IndicatorRule]] = {}
    for rule in rules:
        rules_by_group.setdefault(rule.tag_group, []).append(rule)
    out = []
    for rep in reports:
        matching = rules_by_group.get(group_of_roi.get(rep.roi_id, ""), [])
        if not matching:
            out.append(IndicatorStatus(rep.roi_id, rep.class_id, rep.trend, "ok", None))
            continue
        for rule in matching:
            status = "alert" if rep.trend in rule.alert_on else "ok"
            out.append(IndicatorStatus(rep.roi_id, rep.class_id, rep.trend, status, rule))
    return out


def idw_heatmap(
    samples: Sequence[tuple[GeoPoint, float]],
    geo: GeoBox,
    rows: int,
    cols: int,
    power: float = 2.0,
) -> HeatmapGrid:
    """Inverse-distance-weighted interpolation of point values onto a grid.

    Cell (0, 0) is the north-west corner; distances are equirectangular
    meters. A cell closer than 1e-9 degrees to a sample takes that
    sample's value exactly.
    """
    if not samples:
        raise NoSamples("idw interpolation needs at least one sample")
    if power <= 0:
        raise ValueError(f"power must be positive, got {power}")
    d_lat = (geo.max_lat - geo.min_lat) / rows
    d_lon = (geo.max_lon - geo.min_lon) / cols
    values = []
    for i in range(rows):
        lat = geo.max_lat - (i + 0.5) * d_lat
        for j in range(cols):
            lon = geo.min_lon + (j + 0.5) * d_lon
            values.append(_idw_value(samples, lat, lon, power))
    return HeatmapGrid(geo=geo, rows=rows, cols=cols, values=tuple(values))


def _idw_value(samples: Sequence[tuple[GeoPoint, float]], lat: float, lon: float, power: float) -> float:
    num = 0.0
    den = 0.0
    for point, value in samples:
        dlat = lat - point.lat
        dlon = (lon - point.lon) * math.cos(math.radians((lat + point.lat) / 2.0))
        deg_dist = math.hypot(dlat, dlon)
        if deg_dist < 1e-9:
            return value
        dist_m = deg_dist * METERS_PER_DEGREE
        w = dist_m ** (-power)
        num += w * value
        den += w
    return num / den


def write_counts_csv(
    path: str | Path, records: Iterable[CountRecord], registry: ClassRegistry = DEFAULT_REGISTRY
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["roi_id", "timestamp", "class", "count"])
        for rec in records:
            writer.writerow([rec.roi_id, rec.timestamp, registry.name_of(rec.class_id), rec.count])


def read_counts_csv(
    path: str | Path, registry: ClassRegistry = DEFAULT_REGISTRY
) -> list[CountRecord]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                CountRecord(
                    roi_id=row["roi_id"],
                    timestamp=row["timestamp"],
                    class_id=registry.id_of(row["class"]),
                    count=int(row["count"]),
                )
            )
    return out


def write_change_reports(
    path: str | Path, reports: Iterable[ChangeReport], registry: ClassRegistry = DEFAULT_REGISTRY
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(
                json.dumps(
                    {
                        "roi_id": rep.roi_id,
                        "class": registry.name_of(rep.class_id),
                        "min_count": rep.min_count,
                        "max_count": rep.max_count,
                        "delta": rep.delta,
                        "variation": rep.variation_class,
                        "trend": rep.trend,
                    }
                )
                + "\n"
            )


def write_indicator_statuses(
    path: str | Path, statuses: Iterable[IndicatorStatus], registry: ClassRegistry = DEFAULT_REGISTRY
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for st in statuses:
            fh.write(
                json.dumps(
                    {
                        "roi_id": st.roi_id,
                        "class": registry.name_of(st.class_id),
                        "trend": st.trend,
                        "status": st.status,
                        "rule": None if st.rule is None else st.rule.tag_group,
                    }
                )
                + "\n"
            )


def write_heatmap_json(path: str | Path, grid: HeatmapGrid) -> None:
    Path(path).write_text(
        json.dumps(
            {
                "min_lat": grid.geo.min_lat,
                "min_lon": grid.geo.min_lon,
                "max_lat": grid.geo.max_lat,
                "max_lon": grid.geo.max_lon,
                "rows": grid.rows,
                "cols": grid.cols,
                "values": list(grid.values),
            }
        ),
        encoding="utf-8",
    )


def render_heatmap_png(path: str | Path, grid: HeatmapGrid) -> None:
    """8-bit grayscale rendering, linear min-max normalization."""
    arr = np.array(grid.values, dtype=np.float64).reshape(grid.rows, grid.cols)
    span = arr.max() - arr.min()
    if span > 0:
        arr = (arr - arr.min()) * (255.0 / span)
    else:
        arr = np.zeros_like(arr)
    write_png(path, Raster.from_array(np.rint(arr).astype(np.uint8)[:, :, None]))
