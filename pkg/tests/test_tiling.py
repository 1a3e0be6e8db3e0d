import numpy as np
import pytest

from satcount.geo import PixelBox
from satcount.raster import Raster
from satcount.tiling import (
    TileSpec,
    extract_tile,
    map_from_roi,
    map_to_roi,
    plan_axis,
    plan_tiles,
)


def axis_covered(dim, block, offsets):
    """Oracle: every pixel column in [0, dim) lies in >= 1 tile interval."""
    covered = [0] * dim
    for o in offsets:
        for p in range(o, min(o + block, dim)):
            covered[p] += 1
    return covered


def test_plan_axis_650_block300_no_overlap():
    assert plan_axis(650, 300, 0) == [0, 300, 350]


def test_plan_axis_650_block300_overlap100():
    assert plan_axis(650, 300, 100) == [0, 200, 350]


def test_plan_axis_exact_fit():
    assert plan_axis(300, 300, 0) == [0]
    assert plan_axis(600, 300, 0) == [0, 300]


def test_plan_axis_undersized():
    assert plan_axis(250, 300, 0) == [0]
    assert plan_axis(1, 300, 100) == [0]


def test_plan_axis_near_exact_remainder():
    # one extra pixel forces a clamped final tile
    assert plan_axis(601, 300, 0) == [0, 300, 301]


def test_plan_tiles_650x300():
    plan = plan_tiles(650, 300, TileSpec(block=300, overlap=0))
    assert len(plan) == 3
    assert plan.offsets == ((0, 0), (300, 0), (350, 0))
    assert plan.padded == (False, False, False)


def test_plan_tiles_undersized_is_single_padded():
    plan = plan_tiles(250, 250, TileSpec(block=300))
    assert plan.offsets == ((0, 0),)
    assert plan.padded == (True,)


def test_plan_tiles_single_exact():
    plan = plan_tiles(300, 300, TileSpec(block=300))
    assert plan.offsets == ((0, 0),)
    assert plan.padded == (False,)


def test_tilespec_validates_overlap():
    with pytest.raises(ValueError):
        TileSpec(block=300, overlap=300)
    with pytest.raises(ValueError):
        TileSpec(block=300, overlap=-1)


def test_coverage_random_axes():
    rng = np.random.default_rng(11)
    for _ in range(80):
        block = int(rng.integers(8, 400))
        overlap = int(rng.integers(0, block))
        dim = int(rng.integers(1, 1400))
        offsets = plan_axis(dim, block, overlap)
        cov = axis_covered(dim, block, offsets)
        assert min(cov) >= 1
        assert offsets == sorted(set(offsets))
        stride = block - overlap
        assert len(offsets) <= -(-dim // stride) + 1  # ceil(dim/stride) + 1


def test_no_overlap_single_coverage_outside_clamped_tail():
    rng = np.random.default_rng(12)
    for _ in range(40):
        block = int(rng.integers(8, 300))
        dim = int(rng.integers(block, 1800))
        offsets = plan_axis(dim, block, 0)
        cov = axis_covered(dim, block, offsets)
        # pixels before the clamped final tile are covered exactly once
        last = offsets[-1]
        assert all(c == 1 for c in cov[:last])


def test_small_boxes_fit_whole_in_a_tile():
    rng = np.random.default_rng(13)
    for _ in range(40):
        block = int(rng.integers(50, 300))
        overlap = int(rng.integers(1, block))
        dim = int(rng.integers(block, 2000))
        offsets = plan_axis(dim, block, overlap)
        for _ in range(25):
            size = rng.uniform(0, overlap)
            a = rng.uniform(0, dim - size)
            assert any(o <= a and a + size <= o + block for o in offsets)


def test_map_to_roi_identity():
    b = PixelBox(1, 2, 3, 4)
    assert map_to_roi(b, (0, 0), 1.0) == b


def test_map_to_roi_arithmetic():
    out = map_to_roi(PixelBox(10, 20, 50, 60), (300, 0), 1.3)
    assert out.x1 == pytest.approx(310 / 1.3, abs=1e-9)
    assert out.y1 == pytest.approx(20 / 1.3, abs=1e-9)
    assert out.x2 == pytest.approx(350 / 1.3, abs=1e-9)
    assert out.y2 == pytest.approx(60 / 1.3, abs=1e-9)


def test_map_round_trip():
    b = PixelBox(10.5, 20.25, 50.125, 60.875)
    for offset, scale in [((300, 0), 1.3), ((0, 200), 0.7), ((100, 100), 1.0)]:
        back = map_from_roi(map_to_roi(b, offset, scale), offset, scale)
        for got, want in zip(back.as_tuple(), b.as_tuple()):
            assert got == pytest.approx(want, abs=1e-9)


def test_extract_tile_interior_and_padded():
    rng = np.random.default_rng(5)
    arr = rng.integers(0, 256, size=(400, 500, 3), dtype=np.uint8)
    r = Raster.from_array(arr)
    t = extract_tile(r, (100, 50), 300)
    assert (t.to_array() == arr[50:350, 100:400]).all()
    edge = extract_tile(r, (350, 200), 300)
    assert (edge.width, edge.height) == (300, 300)
    assert (edge.to_array()[:200, :150] == arr[200:400, 350:500]).all()
    assert (edge.to_array()[200:, :] == 0).all()
    assert (edge.to_array()[:, 150:] == 0).all()
