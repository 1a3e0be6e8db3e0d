import sys
from pathlib import Path

import numpy as np
import pytest

from satcount.backends import (
    ExternalProcessBackend,
    MockBackend,
    ReplayBackend,
    decode_response,
    encode_request,
)
from satcount.detect import (
    DetectionSet,
    DetectorConfig,
    Region,
    detect_tile,
    run_detector,
    write_detections,
)
from satcount.errors import BackendFailure, UnknownClass
from satcount.evaluation import Annotation
from satcount.geo import GeoPoint, GeoTransform, PixelBox
from satcount.raster import Raster, RoiImage
from satcount.registry import DEFAULT_REGISTRY
from satcount.synth import NoiseModel

STUB = str(Path(__file__).parent / "stub_detector.py")
CAR = 5


def flat_image(w, h, roi_id="roi-1", ts="2020-03-01T00:00:00Z"):
    return RoiImage(
        roi_id=roi_id,
        raster=Raster.from_array(np.full((h, w, 3), 90, dtype=np.uint8)),
        transform=GeoTransform(GeoPoint(45.0, 7.0), 0.3, 0.3),
        timestamp=ts,
    )


def tile(block=300):
    return Raster.from_array(np.zeros((block, block, 3), dtype=np.uint8))


def ctx(roi_id="roi-1", ts="2020-03-01T00:00:00Z", ox=0, oy=0, scale=1.0, block=300):
    from satcount.detect import TileContext

    return TileContext(
        roi_id=roi_id,
        timestamp=ts,
        offset_x=ox,
        offset_y=oy,
        scale=scale,
        block=block,
        scaled_width=block,
        scaled_height=block,
    )


def test_mock_noise_deterministic_per_tile():
    anns = [Annotation(PixelBox(10 + 25 * i, 10, 28 + 25 * i, 22), CAR) for i in range(8)]
    noise = NoiseModel(miss_rate=0.3, jitter_sigma=1.0, score_tp=(0.5, 0.9))
    backend = MockBackend({"roi-1": anns}, noise=noise, seed=7)
    a = backend.detect(tile(), ctx())
    b = backend.detect(tile(), ctx())
    assert a == b
    other_tile = backend.detect(tile(), ctx(ox=300))
    assert other_tile == []  # annotations all sit in the first tile


def test_replay_round_trips_recorded_file(tmp_path):
    regions = (
        Region(CAR, PixelBox(12.5, 20.0, 40.25, 44.75), 0.875),
        Region(CAR, PixelBox(120.0, 130.0, 150.5, 160.25), 0.3125),
    )
    recorded = DetectionSet(roi_id="roi-1", timestamp="2020-03-01T00:00:00Z", regions=regions)
    src = tmp_path / "recorded.jsonl"
    write_detections(src, [recorded], DEFAULT_REGISTRY)

    backend = ReplayBackend.from_file(src, DEFAULT_REGISTRY)
    img = flat_image(300, 300)
    cfg = DetectorConfig("replayed", 1.0, 0, 0.1, "r", frozenset({"small"}))
    out = run_detector(img, cfg, {"r": backend})
    assert tuple(out) == regions

    replayed = tmp_path / "replayed.jsonl"
    write_detections(replayed, [DetectionSet("roi-1", "2020-03-01T00:00:00Z", tuple(out))])
    assert replayed.read_bytes() == src.read_bytes()


def test_replay_keyed_by_roi_and_timestamp():
    recorded = DetectionSet("roi-1", "2020-03-01T00:00:00Z", (Region(CAR, PixelBox(1, 1, 9, 9), 0.5),))
    backend = ReplayBackend([recorded])
    assert backend.detect(tile(), ctx()) != []
    assert backend.detect(tile(), ctx(ts="2021-01-01T00:00:00Z")) == []
    assert backend.detect(tile(), ctx(roi_id="other")) == []


def test_protocol_encode_decode():
    t = tile(4)
    line = encode_request("tile-1", t)
    import base64
    import json

    req = json.loads(line)
    assert req["id"] == "tile-1"
    assert req["width"] == req["height"] == 4
    assert base64.b64decode(req["pixels_b64"]) == t.pixels

    reply = json.dumps(
        {"id": "tile-1", "detections": [{"class": "Small Car", "x1": 1, "y1": 2, "x2": 3, "y2": 4, "score": 0.5}]}
    )
    regions = decode_response(reply, DEFAULT_REGISTRY, expect_id="tile-1")
    assert regions == [Region(CAR, PixelBox(1, 2, 3, 4), 0.5)]
    with pytest.raises(ValueError):
        decode_response(reply, DEFAULT_REGISTRY, expect_id="tile-2")
    bad = json.dumps({"id": "tile-1", "detections": [{"class": "Nope", "x1": 1, "y1": 2, "x2": 3, "y2": 4, "score": 0.5}]})
    with pytest.raises(UnknownClass):
        decode_response(bad, DEFAULT_REGISTRY, expect_id="tile-1")


def test_external_stub_round_trip():
    with ExternalProcessBackend([sys.executable, STUB, "fixed"], name="stub") as backend:
        out = detect_tile(backend, tile(), ctx())
        assert out == [Region(CAR, PixelBox(17.5, 20.25, 55.0, 60.75), 0.875)]
        # second request over the same process
        again = detect_tile(backend, tile(), ctx(ox=0, oy=0))
        assert again == out


def test_external_stub_through_run_detector():
    img = flat_image(300, 300)
    cfg = DetectorConfig("ext", 1.0, 0, 0.1, "stub", frozenset({"small"}))
    with ExternalProcessBackend([sys.executable, STUB, "fixed"], name="stub") as backend:
        out = run_detector(img, cfg, {"stub": backend})
    assert out == [Region(CAR, PixelBox(17.5, 20.25, 55.0, 60.75), 0.875)]


def test_external_empty_mode():
    with ExternalProcessBackend([sys.executable, STUB, "empty"], name="stub") as backend:
        assert detect_tile(backend, tile(), ctx()) == []


def test_external_crash_becomes_backend_failure():
    with ExternalProcessBackend([sys.executable, STUB, "crash"], name="stub") as backend:
        with pytest.raises(BackendFailure) as ei:
            detect_tile(backend, tile(), ctx())
    assert ei.value.detector == "stub"


def test_external_unknown_class_rejected():
    with ExternalProcessBackend([sys.executable, STUB, "badclass"], name="stub") as backend:
        with pytest.raises(BackendFailure):
            detect_tile(backend, tile(), ctx())


def test_external_multiple_instances():
    with ExternalProcessBackend([sys.executable, STUB, "fixed"], instances=3, name="stub") as backend:
        results = [detect_tile(backend, tile(), ctx(ox=i)) for i in range(6)]
    assert all(r == results[0] for r in results)
