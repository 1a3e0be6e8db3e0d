"""Detection over tiled ROI images with pluggable backends.

A detector configuration fixes the resize scale, tile overlap, and a
confidence floor, and names the backend that scores each 300x300 block.
An ensemble is a list of such configurations routed by object size
group; running one group concatenates every member's ROI-space regions
into the candidate set that fusion later collapses.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from .errors import BackendFailure
from .geo import PixelBox
from .raster import Raster, RoiImage, resize
from .registry import DEFAULT_REGISTRY, SIZE_GROUPS, ClassRegistry, group_map_by_id
from .tiling import DEFAULT_BLOCK, TileSpec, extract_tile, map_to_roi, plan_tiles


@dataclass(frozen=True)
class Region:
    """One detection: class, ROI- or tile-space box, confidence in [0, 1]."""

    class_id: int
    box: PixelBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")


@dataclass(frozen=True)
class DetectionSet:
    roi_id: str
    timestamp: str
    regions: tuple[Region, ...]


@dataclass(frozen=True)
class DetectorConfig:
    """One ensemble member: resize scale, tile overlap, confidence floor."""

    name: str
    scale: float
    overlap: int
    threshold: float
    backend: str
    size_groups: frozenset[str]
    block: int = DEFAULT_BLOCK

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold {self.threshold} outside [0, 1]")
        if not 0 <= self.overlap < self.block:
            raise ValueError(f"overlap {self.overlap} outside [0, block)")
        unknown = self.size_groups - set(SIZE_GROUPS)
        if unknown:
            raise ValueError(f"unknown size groups {sorted(unknown)}")


def standard_detectors(
    vanilla: str = "vanilla", multires: str = "multires", block: int = DEFAULT_BLOCK
) -> tuple[DetectorConfig, ...]:
    """The stock five-member ensemble arrangement.

    Members 1-3 serve small objects, 1-4 medium objects, 3-5 large ones.
    """
    sm = frozenset({"small", "medium"})
    ml = frozenset({"medium", "large"})
    return (
        DetectorConfig("det1", 1.0, 0, 0.15, vanilla, sm, block),
        DetectorConfig("det2", 1.3, 0, 0.06, vanilla, sm, block),
        DetectorConfig("det3", 1.0, 100, 0.06, multires, frozenset(SIZE_GROUPS), block),
        DetectorConfig("det4", 0.7, 100, 0.5, multires, ml, block),
        DetectorConfig("det5", 0.6, 0, 0.06, multires, frozenset({"large"}), block),
    )


@dataclass(frozen=True)
class EnsembleConfig:
    detectors: tuple[DetectorConfig, ...] = field(default_factory=standard_detectors)
    registry: ClassRegistry = DEFAULT_REGISTRY
    size_group_map: Mapping[str, str] | None = None
    _group_of: Mapping[int, str] = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if not self.detectors:
            raise ValueError("ensemble needs at least one detector")
        object.__setattr__(self, "_group_of", group_map_by_id(self.registry, self.size_group_map))

    def group_of(self, class_id: int) -> str:
        return self._group_of[class_id]


@dataclass(frozen=True)
class TileContext:
    """Where a tile sits inside its (possibly rescaled) ROI image."""

    roi_id: str
    timestamp: str
    offset_x: int
    offset_y: int
    scale: float
    block: int
    scaled_width: int
    scaled_height: int

    @property
    def tile_id(self) -> str:
        return f"{self.roi_id}@{self.timestamp}:{self.scale}x:{self.offset_x},{self.offset_y}"


class Backend(Protocol):
    name: str

    def detect(self, tile: Raster, ctx: TileContext) -> list[Region]: ...


def detect_tile(backend: Backend, tile: Raster, ctx: TileContext) -> list[Region]:
    """Run one backend on one tile; boxes come back clipped to the tile."""
    try:
        raw = backend.detect(tile, ctx)
    except Exception as e:
        raise BackendFailure(backend.name, ctx.tile_id, str(e)) from e
    out = []
    for r in raw:
        box = _clip(r.box, ctx.block, ctx.block)
        if box is None:
            continue
        out.append(Region(r.class_id, box, r.score))
    return out


def _clip(box: PixelBox, width: float, height: float) -> PixelBox | None:
    x1 = min(max(box.x1, 0.0), width)
    y1 = min(max(box.y1, 0.0), height)
    x2 = min(max(box.x2, 0.0), width)
    y2 = min(max(box.y2, 0.0), height)
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return None
    return PixelBox(x1, y1, x2, y2)


def effective_threshold(cfg: DetectorConfig, override: float | None) -> float:
    """Config threshold, raised (never lowered) by a per-run override."""
    if override is None:
        return cfg.threshold
    return max(cfg.threshold, override)


def run_detector(
    img: RoiImage,
    cfg: DetectorConfig,
    backends: Mapping[str, Backend],
    *,
    threshold_override: float | None = None,
    workers: int = 1,
) -> list[Region]:
    """All regions one detector finds in one ROI image, in ROI coordinates.

    Resizes by cfg.scale, tiles, detects, drops regions under the
    confidence floor, maps survivors back, and clips them to the unpadded
    image extent. The result is canonically sorted so tile processing
    order (and worker count) never shows in the output.
    """
    try:
        backend = backends[cfg.backend]
    except KeyError:
        raise ValueError(f"detector {cfg.name!r} references unknown backend {cfg.backend!r}") from None
    thr = effective_threshold(cfg, threshold_override)
    scaled = resize(img.raster, cfg.scale) if cfg.scale != 1.0 else img.raster
    plan = plan_tiles(scaled.width, scaled.height, TileSpec(cfg.block, cfg.overlap, cfg.scale))

    def one(offset: tuple[int, int]) -> tuple[tuple[int, int], list[Region]]:
        ctx = TileContext(
            roi_id=img.roi_id,
            timestamp=img.timestamp,
            offset_x=offset[0],
            offset_y=offset[1],
            scale=cfg.scale,
            block=cfg.block,
            scaled_width=scaled.width,
            scaled_height=scaled.height,
        )
        tile = extract_tile(scaled, offset, cfg.block)
        kept = []
        for r in detect_tile(backend, tile, ctx):
            if r.score < thr:
                continue
            mapped = map_to_roi(r.box, offset, cfg.scale)
            clipped = _clip(mapped, img.raster.width, img.raster.height)
            if clipped is None:
                continue
            kept.append(Region(r.class_id, clipped, r.score))
        return offset, kept

    if workers > 1 and len(plan) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, plan.offsets))
    else:
        results = [one(o) for o in plan.offsets]

    keyed = []
    for (ox, oy), regions in results:
        for r in regions:
            keyed.append(((oy, ox, r.class_id) + r.box.as_tuple() + (r.score,), r))
    keyed.sort(key=lambda kr: kr[0])
    return [r for _, r in keyed]


def run_ensemble(
    img: RoiImage,
    ens: EnsembleConfig,
    target_group: str,
    backends: Mapping[str, Backend],
    *,
    threshold_override: float | None = None,
    workers: int = 1,
) -> list[Region]:
    """Candidate set for one size group: every member detector's output
    concatenated, restricted to classes the group owns."""
    if target_group not in SIZE_GROUPS:
        raise ValueError(f"unknown size group {target_group!r}")
    candidates: list[Region] = []
    for cfg in ens.detectors:
        if target_group not in cfg.size_groups:
            continue
        found = run_detector(
            img, cfg, backends, threshold_override=threshold_override, workers=workers
        )
        candidates.extend(r for r in found if ens.group_of(r.class_id) == target_group)
    return candidates


def write_detections(
    path: str | Path, sets: Iterable[DetectionSet], registry: ClassRegistry = DEFAULT_REGISTRY
) -> None:
    """One JSON object per region, tagged with its ROI and acquisition time."""
    with open(path, "w", encoding="utf-8") as fh:
        for ds in sets:
            for r in ds.regions:
                fh.write(
                    json.dumps(
                        {
                            "roi_id": ds.roi_id,
                            "timestamp": ds.timestamp,
                            "class": registry.name_of(r.class_id),
                            "x1": r.box.x1,
                            "y1": r.box.y1,
                            "x2": r.box.x2,
                            "y2": r.box.y2,
                            "score": r.score,
                        }
                    )
                    + "\n"
                )


def read_detections(
    path: str | Path, registry: ClassRegistry = DEFAULT_REGISTRY
) -> list[DetectionSet]:
    """Regroup a detection file by (roi_id, timestamp), file order preserved."""
    grouped: dict[tuple[str, str], list[Region]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            key = (obj["roi_id"], obj["timestamp"])
            grouped.setdefault(key, []).append(
                Region(
                    class_id=registry.id_of(obj["class"]),
                    box=PixelBox(obj["x1"], obj["y1"], obj["x2"], obj["y2"]),
                    score=float(obj["score"]),
                )
            )
    return [
        DetectionSet(roi_id=k[0], timestamp=k[1], regions=tuple(v)) for k, v in grouped.items()
    ]
