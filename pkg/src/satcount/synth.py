"""Deterministic synthetic scenes and a noisy-detector simulation.

Scenes are flat-background rasters with filled rectangles whose
annotations bound them exactly; the raster only exists to exercise the
crop/resize/pad paths, since oracle backends consume annotations.

All randomness comes from one documented generator so that seeds
reproduce across implementations: state seeded through one splitmix64
step, stream from xorshift64* (shifts 12 / 25 / 27, output multiplier
0x2545F4914F6CDD1D), uniforms from the top 53 output bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .detect import Region
from .errors import PackingFailed
from .evaluation import Annotation
from .geo import PixelBox
from .raster import Raster

_MASK64 = (1 << 64) - 1

BACKGROUND_LEVEL = 78
FP_SIDE_RANGE = (4.0, 32.0)  # false-positive box side lengths, px


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(*parts: int | str) -> int:
    """Stable 64-bit sub-seed from ints and strings (FNV-1a fold + mix)."""
    acc = 0xCBF29CE484222325
    for part in parts:
        data = part.to_bytes(8, "little", signed=False) if isinstance(part, int) else str(part).encode()
        for b in data:
            acc = ((acc ^ b) * 0x100000001B3) & _MASK64
    return _splitmix64(acc)


class DetRng:
    """xorshift64* stream; see the module docstring for the exact recipe."""

    def __init__(self, seed: int):
        state = _splitmix64(seed & _MASK64)
        self._state = state if state != 0 else 0x9E3779B97F4A7C15
        self._spare_gauss: float | None = None

    def next_u64(self) -> int:
        s = self._state
        s ^= s >> 12
        s = (s ^ (s << 25)) & _MASK64
        s ^= s >> 27
        self._state = s
        return (s * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))  # [0, 1)
        return lo + u * (hi - lo)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive (modulo bias < 2**-50 here)."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        if self._spare_gauss is not None:
            z = self._spare_gauss
            self._spare_gauss = None
            return mu + sigma * z
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_gauss = r * math.sin(2.0 * math.pi * u2)
        return mu + sigma * r * math.cos(2.0 * math.pi * u2)

    def poisson(self, lam: float) -> int:
        if lam <= 0:
            return 0
        if lam > 60:
            # normal approximation keeps the product method from underflowing
            return max(0, int(round(self.gauss(lam, math.sqrt(lam)))))
        threshold = math.exp(-lam)
        k = 0
        p = 1.0
        while True:
            p *= self.uniform()
            if p <= threshold:
                return k
            k += 1


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic scene.

    objects_per_class maps class id to an inclusive count range;
    object_size maps class id to ((w_min, w_max), (h_min, h_max)) pixel
    ranges. min_separation is the smallest allowed Chebyshev gap between
    object boxes.
    """

    width: int
    height: int
    objects_per_class: Mapping[int, tuple[int, int]]
    object_size: Mapping[int, tuple[tuple[int, int], tuple[int, int]]]
    min_separation: int = 2
    channels: int = 3
    timestamps: tuple[str, ...] = ()

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"scene dims must be >= 1, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        for cid, (lo, hi) in self.objects_per_class.items():
            if lo < 0 or hi < lo:
                raise ValueError(f"bad count range {lo}..{hi} for class {cid}")
            if cid not in self.object_size:
                raise ValueError(f"class {cid} has a count range but no size range")
            (wlo, whi), (hlo, hhi) = self.object_size[cid]
            if wlo < 1 or hlo < 1 or whi < wlo or hhi < hlo:
                raise ValueError(f"bad size range for class {cid}")
            if whi > self.width or hhi > self.height:
                raise ValueError(f"class {cid} objects cannot fit a {self.width}x{self.height} scene")


@dataclass(frozen=True)
class NoiseModel:
    """Detector imperfection model applied to ground truth."""

    miss_rate: float = 0.0
    fp_per_megapixel: float = 0.0
    jitter_sigma: float = 0.0
    score_tp: tuple[float, float] = (1.0, 1.0)
    score_fp: tuple[float, float] = (0.3, 0.7)

    def __post_init__(self):
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"miss_rate {self.miss_rate} outside [0, 1]")
        if self.fp_per_megapixel < 0 or self.jitter_sigma < 0:
            raise ValueError("fp_per_megapixel and jitter_sigma must be >= 0")
        for lo, hi in (self.score_tp, self.score_fp):
            if not (0.0 < lo <= hi <= 1.0):
                raise ValueError(f"bad score range ({lo}, {hi}]")


def _class_color(class_id: int, channels: int) -> tuple[int, ...]:
    if channels == 1:
        return ((class_id * 53 + 61) % 170 + 60,)
    return (
        (class_id * 53 + 61) % 170 + 60,
        (class_id * 97 + 23) % 170 + 60,
        (class_id * 31 + 139) % 170 + 60,
    )


def generate_scene(seed: int, spec: SceneSpec) -> tuple[list[Annotation], Raster]:
    """Deterministic rectangle scene; annotations bound the fills exactly.

    Placement is rejection sampling with a shared budget of 10 retries
    per requested object.
    """
    rng = DetRng(derive_seed(seed, "scene"))
    targets: list[tuple[int, int]] = []  # (class_id, count)
    for cid in sorted(spec.objects_per_class):
        lo, hi = spec.objects_per_class[cid]
        targets.append((cid, rng.randint(lo, hi)))
    total = sum(c for _, c in targets)
    budget = max(10 * total, 10)

    sep = spec.min_separation
    placed: list[tuple[float, float, float, float]] = []
    annotations: list[Annotation] = []
    canvas = np.full((spec.height, spec.width, spec.channels), BACKGROUND_LEVEL, dtype=np.uint8)
    for cid, count in targets:
        (wlo, whi), (hlo, hhi) = spec.object_size[cid]
        color = _class_color(cid, spec.channels)
        for _ in range(count):
            while True:
                if budget <= 0:
                    raise PackingFailed(
                        f"could not place {total} objects in {spec.width}x{spec.height} "
                        f"(separation {sep})"
                    )
                budget -= 1
                w = rng.randint(wlo, whi)
                h = rng.randint(hlo, hhi)
                x1 = rng.randint(0, spec.width - w)
                y1 = rng.randint(0, spec.height - h)
                cand = (float(x1), float(y1), float(x1 + w), float(y1 + h))
                if not any(_closer_than(cand, other, sep) for other in placed):
                    break
            placed.append(cand)
            annotations.append(Annotation(box=PixelBox(*cand), class_id=cid))
            canvas[y1 : y1 + h, x1 : x1 + w] = color
    return annotations, Raster.from_array(canvas)


def _closer_than(a: tuple, b: tuple, sep: float) -> bool:
    """True when boxes a and b have a Chebyshev gap smaller than sep."""
    return a[0] - sep < b[2] and b[0] - sep < a[2] and a[1] - sep < b[3] and b[1] - sep < a[3]


def chebyshev_gap(a: PixelBox, b: PixelBox) -> float:
    """Largest per-axis gap between two boxes (negative when overlapping)."""
    gap_x = max(a.x1 - b.x2, b.x1 - a.x2)
    gap_y = max(a.y1 - b.y2, b.y1 - a.y2)
    return max(gap_x, gap_y)


def simulate_detector(
    annotations: Sequence[Annotation],
    noise: NoiseModel,
    seed: int,
    *,
    width: int,
    height: int,
) -> list[Region]:
    """Ground truth pushed through the imperfection model.

    Four independent sub-streams (miss / score / jitter / fp) are derived
    from the seed, so changing one noise knob leaves the other effects
    bit-identical. False-positive count is Poisson in the scene area.
    """
    rng_miss = DetRng(derive_seed(seed, "miss"))
    rng_score = DetRng(derive_seed(seed, "score"))
    rng_jitter = DetRng(derive_seed(seed, "jitter"))
    rng_fp = DetRng(derive_seed(seed, "fp"))

    out: list[Region] = []
    for ann in annotations:
        if rng_miss.uniform() < noise.miss_rate:
            continue
        score = rng_score.uniform(*noise.score_tp)
        x1, y1, x2, y2 = ann.box.as_tuple()
        if noise.jitter_sigma > 0:
            x1 += rng_jitter.gauss(0.0, noise.jitter_sigma)
            y1 += rng_jitter.gauss(0.0, noise.jitter_sigma)
            x2 += rng_jitter.gauss(0.0, noise.jitter_sigma)
            y2 += rng_jitter.gauss(0.0, noise.jitter_sigma)
        box = PixelBox(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))
        out.append(Region(class_id=ann.class_id, box=box, score=score))

    classes = sorted({a.class_id for a in annotations}) or [0]
    n_fp = rng_fp.poisson(noise.fp_per_megapixel * (width * height) / 1e6)
    for _ in range(n_fp):
        fw = rng_fp.uniform(*FP_SIDE_RANGE)
        fh = rng_fp.uniform(*FP_SIDE_RANGE)
        x1 = rng_fp.uniform(0.0, max(0.0, width - fw))
        y1 = rng_fp.uniform(0.0, max(0.0, height - fh))
        cid = classes[rng_fp.randint(0, len(classes) - 1)]
        score = rng_fp.uniform(*noise.score_fp)
        out.append(Region(class_id=cid, box=PixelBox(x1, y1, x1 + fw, y1 + fh), score=score))
    return out


def load_scene_spec(obj: Mapping, registry) -> SceneSpec:
    """SceneSpec from its JSON form (class names keyed through the registry)."""
    counts = {registry.id_of(name): tuple(rng) for name, rng in obj["objects_per_class"].items()}
    sizes = {
        registry.id_of(name): (tuple(wh[0]), tuple(wh[1]))
        for name, wh in obj["object_size"].items()
    }
    return SceneSpec(
        width=int(obj["width"]),
        height=int(obj["height"]),
        objects_per_class=counts,
        object_size=sizes,
        min_separation=int(obj.get("min_separation", 2)),
        channels=int(obj.get("channels", 3)),
        timestamps=tuple(obj.get("timestamps", ())),
    )
