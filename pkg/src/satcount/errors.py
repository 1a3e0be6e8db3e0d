"""Exception types shared across the package."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class EmptyBoundary(PipelineError):
    """An enclosing box was requested for an empty point sequence."""


class PolarUnsupported(PipelineError):
    """Meter-based box expansion is undefined this close to a pole."""


class ParseFailure(PipelineError):
    """Malformed input document.

    byte_offset points at (approximately) the first offending byte, or -1
    when the position is unknown.
    """

    def __init__(self, message: str, byte_offset: int = -1):
        super().__init__(message)
        self.byte_offset = byte_offset


class EmptyFilter(PipelineError):
    """A tag filter with no entries was used for sampling."""


class EmptyCrop(PipelineError):
    """Crop window does not intersect the raster."""


class DegenerateResize(PipelineError):
    """Requested resize would produce a zero-sized raster."""


class ExcessiveUpsample(PipelineError):
    """Source resolution is too coarse to upsample meaningfully."""


class UnknownClass(PipelineError):
    """A class name not present in the registry was encountered."""


class BackendFailure(PipelineError):
    """A detection backend failed while processing a tile."""

    def __init__(self, detector: str, tile_id: str, message: str = ""):
        detail = f"detector {detector!r} failed on tile {tile_id!r}"
        if message:
            detail += f": {message}"
        super().__init__(detail)
        self.detector = detector
        self.tile_id = tile_id


class InsufficientHistory(PipelineError):
    """A temporal operation needs at least two acquisitions."""


class NoSamples(PipelineError):
    """Interpolation requested without any sample points."""


class NoEligibleImages(PipelineError):
    """No image survived the annotation-count filter."""


class PackingFailed(PipelineError):
    """Scene generation could not place all objects within the retry budget."""
