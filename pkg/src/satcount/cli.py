"""Command-line pipeline: sample, extract, detect, report, evaluate, synth.

Stages hand off through files (JSONL / CSV / images with JSON sidecars),
so each one is independently runnable and re-runnable; identical inputs
produce byte-identical outputs. Exit codes: 0 ok, 2 input error,
3 insufficient data, 4 backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import analytics
from .backends import ExternalProcessBackend, MockBackend, ReplayBackend
from .detect import (
    Backend,
    DetectionSet,
    DetectorConfig,
    EnsembleConfig,
    read_detections,
    run_ensemble,
    standard_detectors,
    write_detections,
)
from .errors import (
    BackendFailure,
    InsufficientHistory,
    NoEligibleImages,
    ParseFailure,
    PipelineError,
)
from .evaluation import (
    DEFAULT_MATCH_IOU,
    DEFAULT_MIN_ANNOTATIONS,
    average_precision,
    map_by_group,
    mape,
    match_detections,
    read_annotations,
    write_annotations,
)
from .fusion import MergeConfig, weighted_nms
from .geo import GeoBox, GeoPoint, GeoTransform, PixelBox, geo_to_pixel, pixel_to_geo
from .osm import (
    DEFAULT_EXPAND_METERS,
    TagFilter,
    parse_osm_xml,
    read_roi_descriptors,
    sample_locations,
    write_roi_descriptors,
)
from .raster import RoiImage, crop, load_roi_image, read_image, save_roi_image, upsample_to_gsd
from .registry import ClassRegistry, group_map_by_id
from .synth import NoiseModel, derive_seed, generate_scene, load_scene_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INSUFFICIENT = 3
EXIT_BACKEND = 4

DEFAULT_TARGET_GSD = 0.3
DEFAULT_GSD_TRIGGER = 0.4


def _expand_path(value: str) -> str:
    """Environment expansion is allowed on path strings only."""
    return os.path.expanduser(os.path.expandvars(value))


@dataclass
class PipelineConfig:
    raw: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None) -> "PipelineConfig":
        if path is None:
            return cls()
        return cls(raw=json.loads(Path(_expand_path(path)).read_text(encoding="utf-8")))

    @property
    def registry(self) -> ClassRegistry:
        names = self.raw.get("class_registry")
        return ClassRegistry(tuple(names)) if names else ClassRegistry()

    @property
    def size_group_map(self) -> Mapping[str, str] | None:
        return self.raw.get("size_group_map")

    @property
    def aoi(self) -> GeoBox | None:
        box = self.raw.get("aoi")
        if box is None:
            return None
        return GeoBox(box["min_lat"], box["min_lon"], box["max_lat"], box["max_lon"])

    @property
    def tag_filter(self) -> TagFilter:
        entries = self.raw.get("tag_filter")
        if entries is None:
            return TagFilter()
        return TagFilter(entries=tuple((k, v) for k, v in entries))

    @property
    def expand_meters(self) -> float:
        return float(self.raw.get("expand_meters", DEFAULT_EXPAND_METERS))

    @property
    def detectors(self) -> tuple[DetectorConfig, ...]:
        spec = self.raw.get("detectors")
        if not spec:
            return standard_detectors()
        out = []
        for i, d in enumerate(spec):
            out.append(
                DetectorConfig(
                    name=d.get("name", f"det{i + 1}"),
                    scale=float(d["scale"]),
                    overlap=int(d.get("overlap", 0)),
                    threshold=float(d["threshold"]),
                    backend=d["backend"],
                    size_groups=frozenset(d.get("size_groups", ["small", "medium", "large"])),
                    block=int(d.get("block", 300)),
                )
            )
        return tuple(out)

    def ensemble(self) -> EnsembleConfig:
        return EnsembleConfig(
            detectors=self.detectors,
            registry=self.registry,
            size_group_map=self.size_group_map,
        )

    @property
    def groups(self) -> tuple[str, ...]:
        return tuple(self.raw.get("groups", ("small", "medium", "large")))

    def merge(self, sigma_override: float | None = None) -> MergeConfig:
        m = self.raw.get("merge", {})
        sigma = sigma_override if sigma_override is not None else float(m.get("sigma", 0.5))
        return MergeConfig(sigma=sigma, class_aware=bool(m.get("class_aware", True)))

    @property
    def target_gsd(self) -> float:
        return float(self.raw.get("target_gsd", DEFAULT_TARGET_GSD))

    @property
    def gsd_trigger(self) -> float:
        return float(self.raw.get("gsd_trigger", DEFAULT_GSD_TRIGGER))

    @property
    def variation_thresholds(self) -> tuple[int, int]:
        lo, hi = self.raw.get("variation_thresholds", analytics.DEFAULT_VARIATION_THRESHOLDS)
        return int(lo), int(hi)

    @property
    def indicator_rules(self) -> list[analytics.IndicatorRule]:
        return [
            analytics.IndicatorRule(
                tag_group=r["tag_group"],
                expected_trend=r["expected_trend"],
                alert_on=frozenset(r.get("alert_on", ())),
            )
            for r in self.raw.get("indicator_rules", ())
        ]

    @property
    def heatmap_spec(self) -> tuple[int, int, float]:
        h = self.raw.get("heatmap", {})
        return int(h.get("rows", 32)), int(h.get("cols", 32)), float(h.get("power", 2.0))

    def build_backends(self, registry: ClassRegistry) -> dict[str, Backend]:
        out: dict[str, Backend] = {}
        for name, spec in self.raw.get("backends", {}).items():
            kind = spec.get("type", "mock")
            if kind == "mock":
                annotations = {}
                if "annotations" in spec:
                    annotations = read_annotations(_expand_path(spec["annotations"]), registry)
                noise = None
                if "noise" in spec:
                    n = spec["noise"]
                    noise = NoiseModel(
                        miss_rate=float(n.get("miss_rate", 0.0)),
                        fp_per_megapixel=float(n.get("fp_per_megapixel", 0.0)),
                        jitter_sigma=float(n.get("jitter_sigma", 0.0)),
                        score_tp=tuple(n.get("score_tp", (1.0, 1.0))),
                        score_fp=tuple(n.get("score_fp", (0.3, 0.7))),
                    )
                out[name] = MockBackend(
                    annotations,
                    score=float(spec.get("score", 1.0)),
                    noise=noise,
                    seed=int(spec.get("seed", 0)),
                    name=name,
                )
            elif kind == "replay":
                out[name] = ReplayBackend.from_file(_expand_path(spec["path"]), registry, name=name)
            elif kind == "external":
                out[name] = ExternalProcessBackend(
                    [_expand_path(str(a)) for a in spec["cmd"]],
                    registry,
                    instances=int(spec.get("instances", 1)),
                    name=name,
                )
            else:
                raise ValueError(f"unknown backend type {kind!r} for {name!r}")
        return out


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text)


def cmd_sample(args: argparse.Namespace) -> int:
    config = PipelineConfig.load(args.config)
    aoi = config.aoi
    if aoi is None:
        raise ValueError("sampling needs an 'aoi' box in the config")
    data = Path(_expand_path(args.osm)).read_bytes()
    features = parse_osm_xml(data)
    rois = sample_locations(aoi, features, config.tag_filter, config.expand_meters)
    write_roi_descriptors(_expand_path(args.out), rois)
    print(f"sampled {len(rois)} regions of interest from {len(features)} features")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    scene_path = Path(_expand_path(args.scene))
    meta = json.loads(scene_path.with_suffix(".json").read_text(encoding="utf-8"))
    transform = GeoTransform(
        GeoPoint(meta["origin_lat"], meta["origin_lon"]),
        float(meta["gsd_x"]),
        float(meta["gsd_y"]),
    )
    timestamp = meta.get("timestamp", "")
    scene = read_image(scene_path)
    rois = read_roi_descriptors(_expand_path(args.rois))
    out_dir = Path(_expand_path(args.out))
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for roi in rois:
        x1, y1 = geo_to_pixel(transform, GeoPoint(roi.geo.max_lat, roi.geo.min_lon))
        x2, y2 = geo_to_pixel(transform, GeoPoint(roi.geo.min_lat, roi.geo.max_lon))
        window = PixelBox(math.floor(x1), math.floor(y1), math.ceil(x2), math.ceil(y2))
        try:
            cropped = crop(scene, window)
        except PipelineError:
            logger.warning("roi %s lies outside the scene, skipped", roi.roi_id)
            continue
        origin = pixel_to_geo(transform, max(0.0, math.floor(x1)), max(0.0, math.floor(y1)))
        img = RoiImage(
            roi_id=roi.roi_id,
            raster=cropped,
            transform=GeoTransform(origin, transform.gsd_x, transform.gsd_y),
            timestamp=timestamp,
        )
        save_roi_image(out_dir / f"{_slug(roi.roi_id)}.png", img)
        written += 1
    print(f"extracted {written} of {len(rois)} regions of interest")
    return EXIT_OK


def _fuse_one(
    img: RoiImage,
    ensemble: EnsembleConfig,
    backends: Mapping[str, Backend],
    groups: Sequence[str],
    merge_cfg: MergeConfig,
    threshold_override: float | None,
    workers: int,
) -> DetectionSet:
    fused = []
    for group in groups:
        candidates = run_ensemble(
            img, ensemble, group, backends, threshold_override=threshold_override, workers=workers
        )
        fused.extend(weighted_nms(candidates, merge_cfg))
    fused.sort(key=lambda r: (-r.score, r.class_id, r.box.x1, r.box.y1, r.box.x2, r.box.y2))
    return DetectionSet(roi_id=img.roi_id, timestamp=img.timestamp, regions=tuple(fused))


def cmd_detect(args: argparse.Namespace) -> int:
    config = PipelineConfig.load(args.config)
    registry = config.registry
    ensemble = config.ensemble()
    backends = config.build_backends(registry)
    merge_cfg = config.merge(args.sigma)

    paths = [Path(_expand_path(p)) for p in args.images]
    if args.images_dir:
        base = Path(_expand_path(args.images_dir))
        paths.extend(sorted(p for p in base.iterdir() if p.suffix.lower() in (".png", ".raw")))
    images = [load_roi_image(p) for p in paths]
    images.sort(key=lambda im: (im.roi_id, im.timestamp))

    sets = []
    for img in images:
        if img.transform.gsd > config.gsd_trigger:
            img, applied = upsample_to_gsd(img, config.target_gsd)
            logger.info("upsampled %s by x%.2f", img.roi_id, applied)
        sets.append(
            _fuse_one(
                img,
                ensemble,
                backends,
                config.groups,
                merge_cfg,
                args.threshold_override,
                args.workers,
            )
        )
    write_detections(_expand_path(args.out), sets, registry)
    total = sum(len(s.regions) for s in sets)
    print(f"detected {total} objects across {len(sets)} acquisitions")
    for backend in backends.values():
        close = getattr(backend, "close", None)
        if close:
            close()
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    config = PipelineConfig.load(args.config)
    registry = config.registry
    sets: list[DetectionSet] = []
    for path in args.detections:
        sets.extend(read_detections(_expand_path(path), registry))

    records = []
    for ds in sets:
        records.extend(analytics.count_by_class(ds))
    records.sort(key=lambda r: (r.roi_id, r.timestamp, r.class_id))

    out_dir = Path(_expand_path(args.out))
    out_dir.mkdir(parents=True, exist_ok=True)
    analytics.write_counts_csv(out_dir / "counts.csv", records, registry)

    series = analytics.build_time_series(records)
    eligible = [s for s in series if len(s.points) >= 2]
    if not eligible:
        raise InsufficientHistory("every ROI has a single acquisition; nothing to compare")
    reports = [analytics.change_report(s, config.variation_thresholds) for s in eligible]
    analytics.write_change_reports(out_dir / "changes.jsonl", reports, registry)

    if args.rois:
        rois = read_roi_descriptors(_expand_path(args.rois))
        statuses = analytics.evaluate_indicators(reports, rois, config.indicator_rules)
        analytics.write_indicator_statuses(out_dir / "indicators.jsonl", statuses, registry)

        roi_delta: dict[str, int] = {}
        for rep in reports:
            roi_delta[rep.roi_id] = roi_delta.get(rep.roi_id, 0) + rep.delta
        known = {r.roi_id: r for r in rois}
        samples = [
            (known[roi_id].geo.center, float(delta))
            for roi_id, delta in sorted(roi_delta.items())
            if roi_id in known
        ]
        if samples:
            grid_box = config.aoi
            if grid_box is None:
                grid_box = GeoBox(
                    min(r.geo.min_lat for r in rois),
                    min(r.geo.min_lon for r in rois),
                    max(r.geo.max_lat for r in rois),
                    max(r.geo.max_lon for r in rois),
                )
            rows, cols, power = config.heatmap_spec
            grid = analytics.idw_heatmap(samples, grid_box, rows, cols, power)
            analytics.write_heatmap_json(out_dir / "heatmap.json", grid)
            analytics.render_heatmap_png(out_dir / "heatmap.png", grid)

    print(f"reported {len(reports)} change series across {len(records)} count records")
    return EXIT_OK


def _image_key(roi_id: str, timestamp: str, multi: bool) -> str:
    return f"{roi_id}@{timestamp}" if multi else roi_id


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = PipelineConfig.load(args.config)
    registry = config.registry
    sets = read_detections(_expand_path(args.detections), registry)
    annotations = read_annotations(_expand_path(args.annotations), registry)

    stamps_per_roi: dict[str, set[str]] = {}
    for ds in sets:
        stamps_per_roi.setdefault(ds.roi_id, set()).add(ds.timestamp)
    multi = any(len(v) > 1 for v in stamps_per_roi.values())
    dets_by_image = {_image_key(ds.roi_id, ds.timestamp, multi): ds.regions for ds in sets}

    image_ids = sorted(set(annotations) | set(dets_by_image))
    class_ids = sorted({a.class_id for anns in annotations.values() for a in anns})
    per_class_ap: dict[int, float | None] = {}
    for cid in class_ids:
        match_sets = []
        for image_id in image_ids:
            gts = [a for a in annotations.get(image_id, []) if a.class_id == cid]
            dets = [r for r in dets_by_image.get(image_id, ()) if r.class_id == cid]
            match_sets.append(match_detections(dets, gts, args.iou))
        per_class_ap[cid] = average_precision(match_sets)

    group_of = group_map_by_id(registry, config.size_group_map)
    groups = map_by_group(per_class_ap, group_of)

    pairs = [
        (len(annotations.get(i, [])), len(dets_by_image.get(i, ())))
        for i in image_ids
    ]
    try:
        mape_percent: float | None = mape(pairs, args.min_annotations)
    except NoEligibleImages:
        mape_percent = None

    report = {
        "per_class": {registry.name_of(cid): ap for cid, ap in per_class_ap.items()},
        "groups": groups,
        "leaderboard": {
            "Small": groups["small"],
            "Medium": groups["medium"],
            "Large": groups["large"],
            "Score": groups["overall"],
        },
        "mape_percent": mape_percent,
        "iou_threshold": args.iou,
        "min_annotations": args.min_annotations,
    }
    Path(_expand_path(args.out)).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    score = "n/a" if groups["overall"] is None else f"{groups['overall']:.4f}"
    print(f"overall mAP {score}, MAPE {'n/a' if mape_percent is None else f'{mape_percent:.2f}%'}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec_obj = json.loads(Path(_expand_path(args.spec)).read_text(encoding="utf-8"))
    gsd = float(spec_obj.get("gsd", DEFAULT_TARGET_GSD))
    config = PipelineConfig.load(args.config)
    registry = config.registry
    spec = load_scene_spec(spec_obj, registry)
    timestamps = list(spec.timestamps) or ["2020-01-01T00:00:00Z"]
    multi = len(timestamps) > 1

    out_dir = Path(_expand_path(args.out))
    out_dir.mkdir(parents=True, exist_ok=True)
    per_image = {}
    for index in range(args.scenes):
        roi_id = f"scene-{index:04d}"
        for t_index, timestamp in enumerate(timestamps):
            annotations, raster = generate_scene(derive_seed(args.seed, index, t_index), spec)
            img = RoiImage(
                roi_id=roi_id,
                raster=raster,
                transform=GeoTransform(GeoPoint(45.0, 7.0), gsd, gsd),
                timestamp=timestamp,
            )
            stem = _slug(roi_id if not multi else f"{roi_id}@{timestamp}")
            save_roi_image(out_dir / f"{stem}.raw", img)
            per_image[_image_key(roi_id, timestamp, multi)] = annotations
    write_annotations(out_dir / "annotations.jsonl", per_image, registry)
    total = sum(len(v) for v in per_image.values())
    print(f"generated {len(per_image)} scenes with {total} objects in {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satcount",
        description="Object counts and temporal activity indicators from satellite ROIs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="filter an OSM extract into ROI descriptors")
    p.add_argument("--config", default=None)
    p.add_argument("--osm", required=True, help="OSM XML extract")
    p.add_argument("--out", required=True, help="ROI descriptor JSONL to write")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("extract", help="crop ROI images out of a georeferenced scene")
    p.add_argument("--config", default=None)
    p.add_argument("--scene", required=True, help="scene image (.png/.raw) with a JSON sidecar")
    p.add_argument("--rois", required=True, help="ROI descriptor JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("detect", help="run the detection ensemble and fuse the results")
    p.add_argument("--config", default=None)
    p.add_argument("images", nargs="*", help="ROI images (each with a JSON sidecar)")
    p.add_argument("--images-dir", default=None, help="directory of ROI images")
    p.add_argument("--out", required=True, help="fused detection JSONL to write")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--threshold-override", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="counts, change magnitudes, indicators, heatmaps")
    p.add_argument("--config", default=None)
    p.add_argument("--detections", nargs="+", required=True)
    p.add_argument("--rois", default=None, help="ROI descriptors for indicators and heatmap")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("evaluate", help="mAP per class/size group plus counting MAPE")
    p.add_argument("--config", default=None)
    p.add_argument("--detections", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True, help="evaluation report JSON to write")
    p.add_argument("--iou", type=float, default=DEFAULT_MATCH_IOU)
    p.add_argument("--min-annotations", type=int, default=DEFAULT_MIN_ANNOTATIONS)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate synthetic scenes with ground truth")
    p.add_argument("--config", default=None)
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BackendFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except (InsufficientHistory, NoEligibleImages) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (ParseFailure, PipelineError, OSError, json.JSONDecodeError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


def console_main() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    console_main()
