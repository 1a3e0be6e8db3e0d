"""Split images into fixed-size detector blocks and map boxes back out.

Blocks are laid out stride = block - overlap apart, without overlap when
the configuration asks for none; the final block per axis is clamped to
the image edge so coverage is always complete. Images smaller than one
block get a single zero-padded tile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geo import PixelBox
from .raster import Raster

DEFAULT_BLOCK = 300


@dataclass(frozen=True)
class TileSpec:
    block: int = DEFAULT_BLOCK
    overlap: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.block < 1:
            raise ValueError(f"block must be >= 1, got {self.block}")
        if not 0 <= self.overlap < self.block:
            raise ValueError(f"overlap {self.overlap} outside [0, block)")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class TilePlan:
    """Tile origins in scaled-image space, plus a padding flag per tile."""

    offsets: tuple[tuple[int, int], ...]
    padded: tuple[bool, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.offsets)


def plan_axis(dim: int, block: int, overlap: int) -> list[int]:
    """Tile offsets along one axis.

    Walk in steps of (block - overlap) while a full block still fits
    strictly inside, then clamp a final offset to the axis end. An axis
    shorter than one block yields the single offset 0 (padding needed).
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if dim < block:
        return [0]
    stride = block - overlap
    offsets = []
    o = 0
    while o + block < dim:
        offsets.append(o)
        o += stride
    last = max(0, dim - block)
    if not offsets or offsets[-1] != last:
        offsets.append(last)
    return offsets


def plan_tiles(width: int, height: int, spec: TileSpec) -> TilePlan:
    """Cartesian product of per-axis offsets; row-major (y outer) order."""
    xs = plan_axis(width, spec.block, spec.overlap)
    ys = plan_axis(height, spec.block, spec.overlap)
    pad = width < spec.block or height < spec.block
    offsets = tuple((x, y) for y in ys for x in xs)
    return TilePlan(offsets=offsets, padded=tuple(pad for _ in offsets))


def extract_tile(r: Raster, offset: tuple[int, int], block: int) -> Raster:
    """Copy one block-sized tile, zero-padding past the right/bottom edges."""
    ox, oy = offset
    src = r.to_array()
    w = min(block, r.width - ox)
    h = min(block, r.height - oy)
    if w < 1 or h < 1:
        raise ValueError(f"tile offset {offset} outside {r.width}x{r.height} raster")
    if w == block and h == block:
        return Raster.from_array(np.ascontiguousarray(src[oy : oy + block, ox : ox + block]))
    out = np.zeros((block, block, r.channels), dtype=np.uint8)
    out[:h, :w] = src[oy : oy + h, ox : ox + w]
    return Raster.from_array(out)


def map_to_roi(box: PixelBox, offset: tuple[int, int], scale: float) -> PixelBox:
    """Tile-space box -> original ROI space: add the tile origin, undo the resize."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    ox, oy = offset
    return PixelBox(
        x1=(box.x1 + ox) / scale,
        y1=(box.y1 + oy) / scale,
        x2=(box.x2 + ox) / scale,
        y2=(box.y2 + oy) / scale,
    )


def map_from_roi(box: PixelBox, offset: tuple[int, int], scale: float) -> PixelBox:
    """Inverse of map_to_roi (ROI space -> tile space)."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    ox, oy = offset
    return PixelBox(
        x1=box.x1 * scale - ox,
        y1=box.y1 * scale - oy,
        x2=box.x2 * scale - ox,
        y2=box.y2 * scale - oy,
    )
