"""Ground-truth matching, interpolated average precision, and count error.

Matching is greedy in descending score order against a 0.5 IoU gate by
default. AP uses all-point interpolation with precision/recall evaluated
per distinct score level, so the result is exactly what a sweep over all
score thresholds would produce (ranking ties cannot skew it).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .detect import Region
from .errors import NoEligibleImages
from .geo import PixelBox, iou
from .registry import DEFAULT_REGISTRY, SIZE_GROUPS, ClassRegistry

DEFAULT_MATCH_IOU = 0.5
DEFAULT_MIN_ANNOTATIONS = 100


@dataclass(frozen=True)
class Annotation:
    """One ground-truth axis-aligned box."""

    box: PixelBox
    class_id: int


@dataclass(frozen=True)
class MatchSet:
    """Outcome of matching one class on one image.

    true_positives/false_positives hold (detection index, score) pairs;
    false_negatives counts ground-truth boxes no detection claimed.
    """

    true_positives: tuple[tuple[int, float], ...]
    false_positives: tuple[tuple[int, float], ...]
    false_negatives: int

    @property
    def total_gt(self) -> int:
        return len(self.true_positives) + self.false_negatives


def match_detections(
    dets: Sequence[Region], gts: Sequence[Annotation], iou_thr: float = DEFAULT_MATCH_IOU
) -> MatchSet:
    """Greedy one-to-one matching, highest score first.

    A detection is a true positive iff its best-IoU still-unmatched
    ground truth overlaps strictly above iou_thr; every ground truth is
    consumed at most once.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    claimed = [False] * len(gts)
    tp: list[tuple[int, float]] = []
    fp: list[tuple[int, float]] = []
    for i in order:
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if claimed[j]:
                continue
            v = iou(dets[i].box, gt.box)
            if v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0 and best_iou > iou_thr:
            claimed[best_j] = True
            tp.append((i, dets[i].score))
        else:
            fp.append((i, dets[i].score))
    return MatchSet(
        true_positives=tuple(tp),
        false_positives=tuple(fp),
        false_negatives=claimed.count(False),
    )


def average_precision(match_sets: Iterable[MatchSet]) -> float | None:
    """All-point interpolated AP pooled across images.

    Returns None when the class has no ground-truth instance anywhere
    (such classes are excluded from group means).
    """
    sets = list(match_sets)
    total_gt = sum(m.total_gt for m in sets)
    if total_gt == 0:
        return None
    scored: list[tuple[float, bool]] = []
    for m in sets:
        scored.extend((s, True) for _, s in m.true_positives)
        scored.extend((s, False) for _, s in m.false_positives)
    if not scored:
        return 0.0
    scored.sort(key=lambda st: -st[0])

    # one PR point per distinct score level (cumulative counts at block end)
    points: list[tuple[float, float]] = []
    cum_tp = cum_fp = 0
    i = 0
    n = len(scored)
    while i < n:
        j = i
        while j < n and scored[j][0] == scored[i][0]:
            cum_tp += scored[j][1]
            cum_fp += not scored[j][1]
            j += 1
        recall = cum_tp / total_gt
        precision = cum_tp / (cum_tp + cum_fp)
        points.append((recall, precision))
        i = j

    ap = 0.0
    max_prec = 0.0
    prev_recall = None
    for recall, precision in reversed(points):
        if prev_recall is not None:
            ap += (prev_recall - recall) * max_prec
        max_prec = max(max_prec, precision)
        prev_recall = recall
    ap += prev_recall * max_prec  # segment down to recall 0
    return ap


def map_by_group(
    per_class_ap: Mapping[int, float | None], group_of: Mapping[int, str]
) -> dict[str, float | None]:
    """Unweighted AP means per size group plus the overall mean."""
    evaluated = {cid: ap for cid, ap in per_class_ap.items() if ap is not None}
    out: dict[str, float | None] = {}
    for group in SIZE_GROUPS:
        values = [ap for cid, ap in evaluated.items() if group_of[cid] == group]
        out[group] = sum(values) / len(values) if values else None
    out["overall"] = sum(evaluated.values()) / len(evaluated) if evaluated else None
    return out


def mape(
    pairs: Iterable[tuple[int, int]], min_annotations: int = DEFAULT_MIN_ANNOTATIONS
) -> float:
    """Mean absolute percentage counting error over well-annotated images.

    Only pairs whose ground-truth count strictly exceeds min_annotations
    participate.
    """
    kept = [(gt, det) for gt, det in pairs if gt > min_annotations]
    if not kept:
        raise NoEligibleImages(f"no image has more than {min_annotations} annotations")
    return 100.0 * sum(abs(det - gt) / gt for gt, det in kept) / len(kept)


def write_annotations(
    path: str | Path,
    per_image: Mapping[str, Sequence[Annotation]],
    registry: ClassRegistry = DEFAULT_REGISTRY,
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, anns in per_image.items():
            for a in anns:
                fh.write(
                    json.dumps(
                        {
                            "image_id": image_id,
                            "class": registry.name_of(a.class_id),
                            "x1": a.box.x1,
                            "y1": a.box.y1,
                            "x2": a.box.x2,
                            "y2": a.box.y2,
                        }
                    )
                    + "\n"
                )


def read_annotations(
    path: str | Path, registry: ClassRegistry = DEFAULT_REGISTRY
) -> dict[str, list[Annotation]]:
    out: dict[str, list[Annotation]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.setdefault(obj["image_id"], []).append(
                Annotation(
                    box=PixelBox(obj["x1"], obj["y1"], obj["x2"], obj["y2"]),
                    class_id=registry.id_of(obj["class"]),
                )
            )
    return out
