"""Confidence-weighted non-maximum suppression.

Classic NMS discards every overlapping lower-confidence box; here each
suppression group is instead replaced by the confidence-weighted average
of its member boxes, which damps corner noise when several ensemble
members see the same object. Grouping is gated on IoU with the current
highest-confidence seed (strictly greater than sigma), one pass per seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .detect import Region
from .geo import PixelBox


@dataclass(frozen=True)
class MergeConfig:
    sigma: float = 0.5
    class_aware: bool = True

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise ValueError(f"sigma must lie in (0, 1), got {self.sigma}")


def _tie_key(r: Region) -> tuple:
    return (r.class_id, r.box.x1, r.box.y1, r.box.x2, r.box.y2)


def weighted_nms(candidates: Iterable[Region], cfg: MergeConfig = MergeConfig()) -> list[Region]:
    """Fuse a candidate set into non-overlapping detections.

    Repeatedly seed with the highest-score remaining candidate (score
    ties broken by ascending class/coordinates), group it with every
    remaining candidate whose IoU with the seed exceeds sigma (same class
    only when class_aware), and emit one region per group: box = the
    score-weighted average of the member boxes, class = seed class,
    score = group maximum. Output is sorted by descending score, then
    the tie key.
    """
    pool = list(candidates)
    for r in pool:
        if r.score <= 0:
            raise ValueError(f"weighted_nms requires positive scores, got {r.score}")

    if cfg.class_aware:
        by_class: dict[int, list[Region]] = {}
        for r in pool:
            by_class.setdefault(r.class_id, []).append(r)
        merged: list[Region] = []
        for cid in sorted(by_class):
            merged.extend(_fuse_single_class(by_class[cid], cfg.sigma))
    else:
        merged = _fuse_single_class(pool, cfg.sigma)

    merged.sort(key=lambda r: (-r.score, _tie_key(r)))
    return merged


def _fuse_single_class(pool: Sequence[Region], sigma: float) -> list[Region]:
    n = len(pool)
    order = sorted(range(n), key=lambda i: (-pool[i].score, _tie_key(pool[i])))
    consumed = [False] * n
    # plain tuples instead of dataclass attribute walks; this loop is hot
    coords = [(r.box.x1, r.box.y1, r.box.x2, r.box.y2) for r in pool]
    areas = [r.box.area for r in pool]

    # coarse grid over box centers: positive IoU needs geometric overlap,
    # so a seed only ever groups candidates whose centers fall within half
    # a cell of its own extent (cell = largest box dimension in the pool)
    cell = 1.0
    for x1, y1, x2, y2 in coords:
        cell = max(cell, x2 - x1, y2 - y1)
    buckets: dict[tuple[int, int], list[int]] = {}
    for i, (x1, y1, x2, y2) in enumerate(coords):
        key = (int((x1 + x2) / 2 // cell), int((y1 + y2) / 2 // cell))
        buckets.setdefault(key, []).append(i)

    out: list[Region] = []
    for seed_pos in order:
        if consumed[seed_pos]:
            continue
        sx1, sy1, sx2, sy2 = coords[seed_pos]
        s_area = areas[seed_pos]
        group = [seed_pos]
        consumed[seed_pos] = True
        bx_lo = int((sx1 - cell / 2) // cell)
        bx_hi = int((sx2 + cell / 2) // cell)
        by_lo = int((sy1 - cell / 2) // cell)
        by_hi = int((sy2 + cell / 2) // cell)
        for by in range(by_lo, by_hi + 1):
            for bx in range(bx_lo, bx_hi + 1):
                for j in buckets.get((bx, by), ()):
                    if consumed[j]:
                        continue
                    x1, y1, x2, y2 = coords[j]
                    iw = min(sx2, x2) - max(sx1, x1)
                    if iw <= 0:
                        continue
                    ih = min(sy2, y2) - max(sy1, y1)
                    if ih <= 0:
                        continue
                    inter = iw * ih
                    union = s_area + areas[j] - inter
                    if union > 0 and inter / union > sigma:
                        group.append(j)
                        consumed[j] = True
        group.sort()  # fixed summation order keeps the result bit-stable
        total_w = sum(pool[i].score for i in group)
        fused = PixelBox(
            x1=sum(pool[i].score * coords[i][0] for i in group) / total_w,
            y1=sum(pool[i].score * coords[i][1] for i in group) / total_w,
            x2=sum(pool[i].score * coords[i][2] for i in group) / total_w,
            y2=sum(pool[i].score * coords[i][3] for i in group) / total_w,
        )
        seed = pool[seed_pos]
        out.append(Region(class_id=seed.class_id, box=fused, score=seed.score))
    return out
