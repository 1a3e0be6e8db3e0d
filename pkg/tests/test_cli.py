import json
from pathlib import Path

import numpy as np
import pytest

from satcount.cli import main
from satcount.detect import DetectionSet, Region, read_detections, write_detections
from satcount.evaluation import Annotation, write_annotations
from satcount.geo import GeoPoint, GeoTransform, PixelBox
from satcount.raster import Raster, RoiImage, load_roi_image, save_roi_image
from satcount.registry import DEFAULT_REGISTRY

CAR = 5

OSM_DOC = b"""<?xml version="1.0" encoding="UTF-8"?>
<osm version="0.6">
  <node id="1" lat="45.00" lon="7.00"/>
  <node id="2" lat="45.00" lon="7.01"/>
  <node id="3" lat="45.01" lon="7.01"/>
  <node id="4" lat="45.01" lon="7.00"/>
  <way id="100">
    <nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/>
    <tag k="amenity" v="school"/>
  </way>
  <way id="101">
    <nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/>
    <tag k="leisure" v="park"/>
  </way>
</osm>
"""


def write_config(tmp_path, extra=None) -> str:
    cfg = {"aoi": {"min_lat": 44.9, "min_lon": 6.9, "max_lat": 45.2, "max_lon": 7.2}}
    cfg.update(extra or {})
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_sample_writes_descriptors(tmp_path):
    osm = tmp_path / "extract.xml"
    osm.write_bytes(OSM_DOC)
    out = tmp_path / "rois.jsonl"
    code = main(["sample", "--config", write_config(tmp_path), "--osm", str(osm), "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1  # default filter keeps the school, drops the park
    assert json.loads(lines[0])["roi_id"] == "amenity=school/100"


def test_sample_missing_file_exits_2(tmp_path):
    code = main(
        ["sample", "--config", write_config(tmp_path), "--osm", str(tmp_path / "nope.xml"), "--out", str(tmp_path / "o")]
    )
    assert code == 2


def test_sample_malformed_xml_exits_2(tmp_path):
    osm = tmp_path / "bad.xml"
    osm.write_bytes(b"<osm><node id=")
    code = main(["sample", "--config", write_config(tmp_path), "--osm", str(osm), "--out", str(tmp_path / "o")])
    assert code == 2


def test_sample_requires_aoi(tmp_path):
    osm = tmp_path / "extract.xml"
    osm.write_bytes(OSM_DOC)
    cfg = tmp_path / "empty.json"
    cfg.write_text("{}")
    code = main(["sample", "--config", str(cfg), "--osm", str(osm), "--out", str(tmp_path / "o")])
    assert code == 2


def test_extract_crops_roi(tmp_path):
    # 1 m/px scene whose footprint contains the school way plus margins
    scene = RoiImage(
        roi_id="scene",
        raster=Raster.from_array(np.full((1500, 1200, 3), 120, dtype=np.uint8)),
        transform=GeoTransform(GeoPoint(45.0115, 6.9985), 1.0, 1.0),
        timestamp="2020-03-01T00:00:00Z",
    )
    scene_path = tmp_path / "scene.png"
    save_roi_image(scene_path, scene)

    osm = tmp_path / "extract.xml"
    osm.write_bytes(OSM_DOC)
    rois = tmp_path / "rois.jsonl"
    assert main(["sample", "--config", write_config(tmp_path), "--osm", str(osm), "--out", str(rois)]) == 0

    out_dir = tmp_path / "roi_images"
    assert main(["extract", "--scene", str(scene_path), "--rois", str(rois), "--out", str(out_dir)]) == 0
    images = sorted(out_dir.glob("*.png"))
    assert len(images) == 1
    img = load_roi_image(images[0])
    assert img.roi_id == "amenity=school/100"
    assert img.timestamp == "2020-03-01T00:00:00Z"
    assert img.raster.width > 100 and img.raster.height > 100


def make_roi_fixture(tmp_path, anns_per_roi, size=(300, 300)):
    """ROI images + annotation file + config with mock backends."""
    images_dir = tmp_path / "images"
    images_dir.mkdir(exist_ok=True)
    per_image = {}
    for roi_id, anns in anns_per_roi.items():
        img = RoiImage(
            roi_id=roi_id,
            raster=Raster.from_array(np.full((size[1], size[0], 3), 90, dtype=np.uint8)),
            transform=GeoTransform(GeoPoint(45.0, 7.0), 0.3, 0.3),
            timestamp="2020-03-01T00:00:00Z",
        )
        save_roi_image(images_dir / f"{roi_id}.raw", img)
        per_image[roi_id] = anns
    ann_path = tmp_path / "annotations.jsonl"
    write_annotations(ann_path, per_image, DEFAULT_REGISTRY)
    config = write_config(
        tmp_path,
        {
            "groups": ["small"],
            "backends": {
                "vanilla": {"type": "mock", "annotations": str(ann_path)},
                "multires": {"type": "mock", "annotations": str(ann_path)},
            },
        },
    )
    return images_dir, ann_path, config


def ann(x1, y1, x2, y2, cls=CAR):
    return Annotation(box=PixelBox(x1, y1, x2, y2), class_id=cls)


def test_detect_counts_equal_ground_truth(tmp_path):
    anns = {
        "roi-a": [ann(10, 10, 26, 19), ann(60, 40, 74, 48), ann(150, 200, 168, 209)],
        "roi-b": [ann(30, 30, 44, 38)],
    }
    images_dir, _, config = make_roi_fixture(tmp_path, anns)
    out = tmp_path / "detections.jsonl"
    code = main(["detect", "--config", config, "--images-dir", str(images_dir), "--out", str(out)])
    assert code == 0
    sets = read_detections(out)
    counts = {s.roi_id: len(s.regions) for s in sets}
    assert counts == {"roi-a": 3, "roi-b": 1}


def test_detect_empty_input_writes_empty_file(tmp_path):
    out = tmp_path / "detections.jsonl"
    code = main(["detect", "--out", str(out)])
    assert code == 0
    assert out.read_text() == ""


def test_detect_threshold_override_suppresses(tmp_path):
    anns = {"roi-a": [ann(10, 10, 26, 19)]}
    images_dir, ann_path, _ = make_roi_fixture(tmp_path, anns)
    config = write_config(
        tmp_path,
        {
            "groups": ["small"],
            "backends": {
                "vanilla": {"type": "mock", "annotations": str(ann_path), "score": 0.2},
                "multires": {"type": "mock", "annotations": str(ann_path), "score": 0.2},
            },
        },
    )
    out = tmp_path / "detections.jsonl"
    assert main(["detect", "--config", config, "--images-dir", str(images_dir), "--out", str(out)]) == 0
    assert len(read_detections(out)) == 1

    out2 = tmp_path / "detections2.jsonl"
    code = main(
        [
            "detect",
            "--config",
            config,
            "--images-dir",
            str(images_dir),
            "--out",
            str(out2),
            "--threshold-override",
            "0.25",
        ]
    )
    assert code == 0
    assert out2.read_text() == ""  # 0.2-score mocks fall below the raised floor


def test_detect_deterministic_across_workers(tmp_path):
    anns = {
        f"roi-{i}": [ann(10 + 7 * j, 20 + 11 * (j % 5), 24 + 7 * j, 29 + 11 * (j % 5)) for j in range(9)]
        for i in range(4)
    }
    images_dir, _, config = make_roi_fixture(tmp_path, anns, size=(650, 420))
    out1 = tmp_path / "w1.jsonl"
    out8 = tmp_path / "w8.jsonl"
    assert main(["detect", "--config", config, "--images-dir", str(images_dir), "--out", str(out1), "--workers", "1"]) == 0
    assert main(["detect", "--config", config, "--images-dir", str(images_dir), "--out", str(out8), "--workers", "8"]) == 0
    assert out1.read_bytes() == out8.read_bytes()


def write_count_series(path, series, roi="lot-1", cls_name="Small Car"):
    """Detection JSONL carrying `series[t]` fake regions per timestamp."""
    sets = []
    for t, count in enumerate(series):
        regions = tuple(
            Region(DEFAULT_REGISTRY.id_of(cls_name), PixelBox(20 * i, 0, 20 * i + 10, 8), 0.9)
            for i in range(count)
        )
        sets.append(DetectionSet(roi_id=roi, timestamp=f"2020-{t + 1:02d}-01T00:00:00Z", regions=regions))
    write_detections(path, sets, DEFAULT_REGISTRY)


def test_report_published_delta(tmp_path):
    det = tmp_path / "detections.jsonl"
    write_count_series(det, [410, 418, 435])
    out_dir = tmp_path / "report"
    assert main(["report", "--detections", str(det), "--out", str(out_dir)]) == 0
    changes = [json.loads(l) for l in (out_dir / "changes.jsonl").read_text().splitlines()]
    assert len(changes) == 1
    assert changes[0]["delta"] == 25
    assert changes[0]["variation"] == "small"
    counts = (out_dir / "counts.csv").read_text().splitlines()
    assert counts[0] == "roi_id,timestamp,class,count"
    assert len(counts) == 4


def test_report_single_timestamp_exits_3(tmp_path):
    det = tmp_path / "detections.jsonl"
    write_count_series(det, [42])
    code = main(["report", "--detections", str(det), "--out", str(tmp_path / "r")])
    assert code == 3


def test_report_heatmap_and_indicators(tmp_path):
    det = tmp_path / "detections.jsonl"
    write_count_series(det, [100, 260], roi="shop=supermarket/1")
    rois = tmp_path / "rois.jsonl"
    rois.write_text(
        json.dumps(
            {
                "roi_id": "shop=supermarket/1",
                "feature": 1,
                "tag_group": "shop=supermarket",
                "min_lat": 44.99,
                "min_lon": 6.99,
                "max_lat": 45.01,
                "max_lon": 7.01,
            }
        )
        + "\n"
    )
    config = write_config(
        tmp_path,
        {
            "heatmap": {"rows": 6, "cols": 9},
            "indicator_rules": [
                {"tag_group": "shop=supermarket", "expected_trend": "stable", "alert_on": ["increase", "decrease"]}
            ],
        },
    )
    out_dir = tmp_path / "report"
    assert main(["report", "--config", config, "--detections", str(det), "--rois", str(rois), "--out", str(out_dir)]) == 0

    statuses = [json.loads(l) for l in (out_dir / "indicators.jsonl").read_text().splitlines()]
    assert statuses[0]["status"] == "alert"  # 100 -> 260 increase breaks "stable"

    heat = json.loads((out_dir / "heatmap.json").read_text())
    assert heat["rows"] == 6 and heat["cols"] == 9
    from satcount.raster import read_png

    png = read_png(out_dir / "heatmap.png")
    assert (png.width, png.height) == (9, 6)


def test_evaluate_perfect_fixture(tmp_path):
    boxes = [ann(12 * i, 0, 12 * i + 9, 8) for i in range(120)]
    per_image = {"roi-a": boxes}
    ann_path = tmp_path / "annotations.jsonl"
    write_annotations(ann_path, per_image, DEFAULT_REGISTRY)
    det_path = tmp_path / "detections.jsonl"
    regions = tuple(Region(CAR, a.box, 1.0) for a in boxes)
    write_detections(det_path, [DetectionSet("roi-a", "t0", regions)], DEFAULT_REGISTRY)

    out = tmp_path / "evaluation.json"
    code = main(["evaluate", "--detections", str(det_path), "--annotations", str(ann_path), "--out", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["per_class"]["Small Car"] == 1.0
    assert report["groups"]["overall"] == 1.0
    assert report["leaderboard"]["Score"] == 1.0
    assert set(report["leaderboard"]) == {"Small", "Medium", "Large", "Score"}
    assert report["mape_percent"] == 0.0


def test_evaluate_published_mape(tmp_path):
    # per-image totals follow the published three-acquisition series
    gt_counts = [336, 344, 332]
    det_counts = [410, 418, 435]
    per_image = {}
    sets = []
    for i, (g, d) in enumerate(zip(gt_counts, det_counts)):
        image = f"lot-{i}"
        per_image[image] = [ann(12 * j, 0, 12 * j + 9, 8) for j in range(g)]
        regions = tuple(Region(CAR, PixelBox(12 * j, 0, 12 * j + 9, 8), 0.9) for j in range(d))
        sets.append(DetectionSet(image, "t0", regions))
    ann_path = tmp_path / "annotations.jsonl"
    write_annotations(ann_path, per_image, DEFAULT_REGISTRY)
    det_path = tmp_path / "detections.jsonl"
    write_detections(det_path, sets, DEFAULT_REGISTRY)

    out = tmp_path / "evaluation.json"
    assert main(["evaluate", "--detections", str(det_path), "--annotations", str(ann_path), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["mape_percent"] == pytest.approx(24.853177938776146, abs=1e-9)


def test_synth_generates_scenes_and_annotations(tmp_path):
    spec = {
        "width": 320,
        "height": 240,
        "objects_per_class": {"Small Car": [12, 18]},
        "object_size": {"Small Car": [[10, 16], [6, 9]]},
        "min_separation": 3,
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out_dir = tmp_path / "scenes"
    code = main(["synth", "--spec", str(spec_path), "--out", str(out_dir), "--seed", "5", "--scenes", "3"])
    assert code == 0
    raws = sorted(out_dir.glob("*.raw"))
    assert len(raws) == 3
    img = load_roi_image(raws[0])
    assert img.raster.width == 320
    from satcount.evaluation import read_annotations

    per_image = read_annotations(out_dir / "annotations.jsonl", DEFAULT_REGISTRY)
    assert set(per_image) == {"scene-0000", "scene-0001", "scene-0002"}
    assert all(12 <= len(v) <= 18 for v in per_image.values())


def test_detect_upsamples_coarse_gsd(tmp_path, caplog):
    import logging

    images_dir = tmp_path / "images"
    images_dir.mkdir()
    img = RoiImage(
        roi_id="coarse-roi",
        raster=Raster.from_array(np.full((200, 200, 3), 90, dtype=np.uint8)),
        transform=GeoTransform(GeoPoint(45.0, 7.0), 0.6, 0.6),
        timestamp="2020-03-01T00:00:00Z",
    )
    save_roi_image(images_dir / "coarse-roi.raw", img)
    # annotations authored in the 0.3-GSD frame the pipeline resamples to
    per_image = {"coarse-roi": [ann(20, 20, 52, 38)]}
    ann_path = tmp_path / "annotations.jsonl"
    write_annotations(ann_path, per_image, DEFAULT_REGISTRY)
    config = write_config(
        tmp_path,
        {
            "groups": ["small"],
            "backends": {
                "vanilla": {"type": "mock", "annotations": str(ann_path)},
                "multires": {"type": "mock", "annotations": str(ann_path)},
            },
        },
    )
    out = tmp_path / "detections.jsonl"
    with caplog.at_level(logging.INFO, logger="satcount.cli"):
        assert main(["detect", "--config", config, "--images-dir", str(images_dir), "--out", str(out)]) == 0
    assert any("upsampled" in rec.message for rec in caplog.records)
    assert len(read_detections(out)) == 1


def test_config_paths_expand_environment(tmp_path, monkeypatch):
    anns = {"roi-a": [ann(10, 10, 26, 19)]}
    images_dir, ann_path, _ = make_roi_fixture(tmp_path, anns)
    monkeypatch.setenv("SATCOUNT_FIXTURES", str(tmp_path))
    config = write_config(
        tmp_path,
        {
            "groups": ["small"],
            "backends": {
                "vanilla": {"type": "mock", "annotations": "$SATCOUNT_FIXTURES/annotations.jsonl"},
                "multires": {"type": "mock", "annotations": "$SATCOUNT_FIXTURES/annotations.jsonl"},
            },
        },
    )
    out = tmp_path / "detections.jsonl"
    assert main(["detect", "--config", config, "--images-dir", str(images_dir), "--out", str(out)]) == 0
    assert len(read_detections(out)) == 1


def test_pipeline_synth_detect_report_round_trip(tmp_path):
    spec = {
        "width": 400,
        "height": 300,
        "objects_per_class": {"Small Car": [20, 24]},
        "object_size": {"Small Car": [[10, 16], [6, 9]]},
        "min_separation": 3,
        "timestamps": ["2020-01-01T00:00:00Z", "2020-02-01T00:00:00Z"],
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    scenes = tmp_path / "scenes"
    assert main(["synth", "--spec", str(spec_path), "--out", str(scenes), "--seed", "9"]) == 0

    config = write_config(
        tmp_path,
        {
            "groups": ["small"],
            "backends": {
                "vanilla": {"type": "mock", "annotations": str(scenes / "annotations.jsonl")},
                "multires": {"type": "mock", "annotations": str(scenes / "annotations.jsonl")},
            },
        },
    )
    det = tmp_path / "detections.jsonl"
    assert main(["detect", "--config", config, "--images-dir", str(scenes), "--out", str(det)]) == 0
    report_dir = tmp_path / "report"
    assert main(["report", "--config", config, "--detections", str(det), "--out", str(report_dir)]) == 0
    assert (report_dir / "counts.csv").exists()
    assert (report_dir / "changes.jsonl").exists()
