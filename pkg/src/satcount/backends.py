"""Detection backends: annotation oracle, file replay, external process.

Real CNN runtimes plug in through the external-process protocol and are
never linked into this package; the mock and replay backends make the
rest of the pipeline testable without any model at all.

External protocol, newline-delimited JSON on the child's stdin/stdout,
one request and one response per line, answered in request order:

  request:  {"id": str, "width": int, "height": int, "channels": int,
             "pixels_b64": base64 of the row-major bytes}
  response: {"id": same str, "detections": [{"class": registry name,
             "x1": f, "y1": f, "x2": f, "y2": f, "score": f}, ...]}
"""

from __future__ import annotations

import base64
import json
import queue
import subprocess
import threading
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .detect import DetectionSet, Region, TileContext, read_detections
from .errors import UnknownClass
from .evaluation import Annotation
from .geo import PixelBox
from .raster import Raster
from .registry import DEFAULT_REGISTRY, ClassRegistry
from .synth import NoiseModel, derive_seed, simulate_detector


def _tile_visible(box: PixelBox, scale: float, ctx: TileContext) -> PixelBox | None:
    """Box mapped into tile space when it lies fully inside the tile, else None.

    "Fully inside" mirrors how fixed-input detectors behave at block
    borders: an object cut by the tile edge is not reported; overlapped
    configurations exist to catch those.
    """
    x1, y1, x2, y2 = (c * scale for c in box.as_tuple())
    if (
        x1 >= ctx.offset_x
        and y1 >= ctx.offset_y
        and x2 <= ctx.offset_x + ctx.block
        and y2 <= ctx.offset_y + ctx.block
    ):
        return PixelBox(x1 - ctx.offset_x, y1 - ctx.offset_y, x2 - ctx.offset_x, y2 - ctx.offset_y)
    return None


class MockBackend:
    """Oracle backend driven by ground-truth annotations.

    Reports every annotation whose scaled box sits fully inside the
    requested tile. An optional noise model is applied per tile with a
    sub-seed derived from the tile identity, so results do not depend on
    processing order or worker count.
    """

    def __init__(
        self,
        annotations_by_roi: Mapping[str, Sequence[Annotation]],
        *,
        score: float = 1.0,
        noise: NoiseModel | None = None,
        seed: int = 0,
        name: str = "mock",
    ):
        self.name = name
        self._by_roi = {k: tuple(v) for k, v in annotations_by_roi.items()}
        self._score = score
        self._noise = noise
        self._seed = seed
        # scaled corner tuples per (image key, scale); rebuilding them for
        # every tile dominates otherwise
        self._scaled_cache: dict[tuple[str, float], tuple] = {}

    def _scaled_boxes(self, image_key: str, scale: float) -> tuple:
        cache_key = (image_key, scale)
        cached = self._scaled_cache.get(cache_key)
        if cached is None:
            anns = self._by_roi.get(image_key, ())
            cached = tuple(
                (a.box.x1 * scale, a.box.y1 * scale, a.box.x2 * scale, a.box.y2 * scale, a.class_id)
                for a in anns
            )
            self._scaled_cache[cache_key] = cached
        return cached

    def detect(self, tile: Raster, ctx: TileContext) -> list[Region]:
        image_key = f"{ctx.roi_id}@{ctx.timestamp}"
        if image_key not in self._by_roi:
            image_key = ctx.roi_id
        ox, oy = ctx.offset_x, ctx.offset_y
        x_hi, y_hi = ox + ctx.block, oy + ctx.block
        visible: list[Annotation] = []
        for x1, y1, x2, y2, class_id in self._scaled_boxes(image_key, ctx.scale):
            if x1 >= ox and y1 >= oy and x2 <= x_hi and y2 <= y_hi:
                visible.append(Annotation(PixelBox(x1 - ox, y1 - oy, x2 - ox, y2 - oy), class_id))
        if self._noise is None:
            return [Region(a.class_id, a.box, self._score) for a in visible]
        tile_seed = derive_seed(self._seed, ctx.roi_id, ctx.timestamp, ctx.offset_x, ctx.offset_y, str(ctx.scale))
        return simulate_detector(visible, self._noise, tile_seed, width=ctx.block, height=ctx.block)


class ReplayBackend:
    """Replays recorded ROI-space detections through the tile interface."""

    def __init__(self, sets: Iterable[DetectionSet], name: str = "replay"):
        self.name = name
        self._by_key: dict[tuple[str, str], tuple[Region, ...]] = {
            (ds.roi_id, ds.timestamp): ds.regions for ds in sets
        }

    @classmethod
    def from_file(cls, path: str | Path, registry: ClassRegistry = DEFAULT_REGISTRY, name: str = "replay"):
        return cls(read_detections(path, registry), name=name)

    def detect(self, tile: Raster, ctx: TileContext) -> list[Region]:
        recorded = self._by_key.get((ctx.roi_id, ctx.timestamp), ())
        out = []
        for r in recorded:
            t_box = _tile_visible(r.box, ctx.scale, ctx)
            if t_box is not None:
                out.append(Region(r.class_id, t_box, r.score))
        return out


def encode_request(request_id: str, tile: Raster) -> str:
    return json.dumps(
        {
            "id": request_id,
            "width": tile.width,
            "height": tile.height,
            "channels": tile.channels,
            "pixels_b64": base64.b64encode(tile.pixels).decode("ascii"),
        }
    )


def decode_response(line: str, registry: ClassRegistry, expect_id: str) -> list[Region]:
    obj = json.loads(line)
    if obj.get("id") != expect_id:
        raise ValueError(f"response id {obj.get('id')!r} does not match request {expect_id!r}")
    out = []
    for det in obj.get("detections", []):
        name = det["class"]
        class_id = registry.id_of(name)  # raises UnknownClass for stray names
        out.append(
            Region(
                class_id=class_id,
                box=PixelBox(float(det["x1"]), float(det["y1"]), float(det["x2"]), float(det["y2"])),
                score=float(det["score"]),
            )
        )
    return out


class _Worker:
    """One child process plus the lock serializing requests to it."""

    def __init__(self, argv: Sequence[str]):
        self.proc = subprocess.Popen(
            list(argv),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self.lock = threading.Lock()

    def ask(self, line: str) -> str:
        with self.lock:
            assert self.proc.stdin is not None and self.proc.stdout is not None
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
            reply = self.proc.stdout.readline()
        if reply == "":
            raise RuntimeError(f"detector process exited (code {self.proc.poll()})")
        return reply

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                if self.proc.stdin:
                    self.proc.stdin.close()
                self.proc.wait(timeout=5)
            except Exception:
                self.proc.kill()


class ExternalProcessBackend:
    """Line-protocol child processes. Each instance answers one request at
    a time; several instances may serve a worker pool concurrently."""

    def __init__(
        self,
        argv: Sequence[str],
        registry: ClassRegistry = DEFAULT_REGISTRY,
        *,
        instances: int = 1,
        name: str = "external",
    ):
        if instances < 1:
            raise ValueError(f"instances must be >= 1, got {instances}")
        self.name = name
        self._argv = list(argv)
        self._registry = registry
        self._instances = instances
        self._pool: queue.Queue[_Worker] | None = None
        self._start_lock = threading.Lock()

    def _ensure_started(self) -> queue.Queue:
        with self._start_lock:
            if self._pool is None:
                pool: queue.Queue[_Worker] = queue.Queue()
                for _ in range(self._instances):
                    pool.put(_Worker(self._argv))
                self._pool = pool
        return self._pool

    def detect(self, tile: Raster, ctx: TileContext) -> list[Region]:
        pool = self._ensure_started()
        worker = pool.get()
        try:
            reply = worker.ask(encode_request(ctx.tile_id, tile))
        finally:
            pool.put(worker)
        return decode_response(reply, self._registry, expect_id=ctx.tile_id)

    def close(self) -> None:
        if self._pool is None:
            return
        while not self._pool.empty():
            self._pool.get_nowait().close()
        self._pool = None

    def __enter__(self) -> "ExternalProcessBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
