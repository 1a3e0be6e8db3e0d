"""Minimal 8-bit raster model: crop, bilinear resize, GSD-normalizing upsample.

Pixels are stored row-major as raw bytes. PNG is supported for real
imagery; synthetic fixtures may use a headerless .raw file whose shape
lives in a JSON sidecar.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DegenerateResize, EmptyCrop, ExcessiveUpsample
from .geo import GeoPoint, GeoTransform, PixelBox


@dataclass(frozen=True)
class Raster:
    """Row-major 8-bit image, 1 (gray) or 3 (RGB) channels."""

    width: int
    height: int
    channels: int
    pixels: bytes

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"raster dims must be >= 1, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        expected = self.width * self.height * self.channels
        if len(self.pixels) != expected:
            raise ValueError(f"pixel buffer holds {len(self.pixels)} bytes, expected {expected}")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Raster":
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 array, got {arr.dtype}")
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, pixels=np.ascontiguousarray(arr).tobytes())

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, self.channels)


@dataclass(frozen=True)
class RoiImage:
    """One region-of-interest acquisition: pixels plus georeferencing."""

    roi_id: str
    raster: Raster
    transform: GeoTransform
    timestamp: str


def crop(r: Raster, box: PixelBox) -> Raster:
    """Copy of the integer window `box`, clamped to the raster bounds."""
    x1 = max(0, int(round(box.x1)))
    y1 = max(0, int(round(box.y1)))
    x2 = min(r.width, int(round(box.x2)))
    y2 = min(r.height, int(round(box.y2)))
    if x2 - x1 < 1 or y2 - y1 < 1:
        raise EmptyCrop(f"window {box.as_tuple()} does not intersect a {r.width}x{r.height} raster")
    window = r.to_array()[y1:y2, x1:x2]
    return Raster.from_array(np.ascontiguousarray(window))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resize(r: Raster, scale: float) -> Raster:
    """Bilinear resize with half-pixel-center alignment.

    Output dims are round(dim * scale). scale == 1.0 returns a
    byte-identical copy.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    out_w = _round_half_up(r.width * scale)
    out_h = _round_half_up(r.height * scale)
    if out_w < 1 or out_h < 1:
        raise DegenerateResize(f"scale {scale} collapses {r.width}x{r.height} to {out_w}x{out_h}")
    if out_w == r.width and out_h == r.height:
        return r

    src = r.to_array().astype(np.float32)
    # destination pixel centers mapped back into source coordinates
    sx = (np.arange(out_w) + 0.5) * (r.width / out_w) - 0.5
    sy = (np.arange(out_h) + 0.5) * (r.height / out_h) - 0.5
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, r.width - 1)
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, r.height - 1)
    x1 = np.minimum(x0 + 1, r.width - 1)
    y1 = np.minimum(y0 + 1, r.height - 1)
    fx = np.clip(sx - x0, 0.0, 1.0).astype(np.float32)[None, :, None]
    fy = np.clip(sy - y0, 0.0, 1.0).astype(np.float32)[:, None, None]

    # separable: blend rows first, then columns of the blended rows
    rows = src[y0] * (1.0 - fy) + src[y1] * fy
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    return Raster.from_array(np.rint(out).astype(np.uint8))


GSD_UPSAMPLE_LIMIT = 8.0


def upsample_to_gsd(img: RoiImage, target_gsd: float) -> tuple[RoiImage, float]:
    """Rescale an acquisition so one pixel covers target_gsd meters.

    Requires square pixels. Scales within 1% of unity are skipped (the
    raster is kept as-is but the transform still reports target_gsd, so
    downstream consumers see a uniform resolution).
    """
    if target_gsd <= 0:
        raise ValueError(f"target_gsd must be positive, got {target_gsd}")
    source_gsd = img.transform.gsd
    applied_scale = source_gsd / target_gsd
    if applied_scale > GSD_UPSAMPLE_LIMIT:
        raise ExcessiveUpsample(
            f"gsd {source_gsd} would need x{applied_scale:.1f} upsampling to reach {target_gsd}"
        )
    new_transform = GeoTransform(img.transform.origin, target_gsd, target_gsd)
    if abs(applied_scale - 1.0) < 0.01:
        return replace(img, transform=new_transform), 1.0
    resized = resize(img.raster, applied_scale)
    return replace(img, raster=resized, transform=new_transform), applied_scale


def write_png(path: str | Path, r: Raster) -> None:
    arr = r.to_array()
    mode = "L" if r.channels == 1 else "RGB"
    Image.fromarray(arr[:, :, 0] if r.channels == 1 else arr, mode=mode).save(path, format="PNG")


def read_png(path: str | Path) -> Raster:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.uint8)
    return Raster.from_array(arr)


def write_raw(path: str | Path, r: Raster) -> None:
    """Headerless pixel dump next to a JSON sidecar describing the shape."""
    path = Path(path)
    path.write_bytes(r.pixels)
    sidecar = {"width": r.width, "height": r.height, "channels": r.channels}
    path.with_suffix(".json").write_text(json.dumps(sidecar), encoding="utf-8")


def read_raw(path: str | Path) -> Raster:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    return Raster(
        width=int(meta["width"]),
        height=int(meta["height"]),
        channels=int(meta["channels"]),
        pixels=path.read_bytes(),
    )


def read_image(path: str | Path) -> Raster:
    """Dispatch on extension: .png or .raw (with sidecar)."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    if path.suffix.lower() == ".raw":
        return read_raw(path)
    raise ValueError(f"unsupported image format: {path.name}")


def save_roi_image(path: str | Path, img: RoiImage) -> None:
    """Write pixels (.png or .raw) and a sidecar with the georeferencing."""
    path = Path(path)
    sidecar: dict = {
        "roi_id": img.roi_id,
        "timestamp": img.timestamp,
        "origin_lat": img.transform.origin.lat,
        "origin_lon": img.transform.origin.lon,
        "gsd_x": img.transform.gsd_x,
        "gsd_y": img.transform.gsd_y,
    }
    if path.suffix.lower() == ".png":
        write_png(path, img.raster)
    elif path.suffix.lower() == ".raw":
        path.write_bytes(img.raster.pixels)
        sidecar.update(width=img.raster.width, height=img.raster.height, channels=img.raster.channels)
    else:
        raise ValueError(f"unsupported image format: {path.name}")
    path.with_suffix(".json").write_text(json.dumps(sidecar), encoding="utf-8")


def load_roi_image(path: str | Path) -> RoiImage:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    return RoiImage(
        roi_id=meta["roi_id"],
        raster=read_image(path),
        transform=GeoTransform(
            GeoPoint(meta["origin_lat"], meta["origin_lon"]),
            float(meta["gsd_x"]),
            float(meta["gsd_y"]),
        ),
        timestamp=meta["timestamp"],
    )
