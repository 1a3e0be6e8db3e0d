"""Object counts and temporal activity indicators from satellite ROIs.

The pipeline: sample strategic locations from an OpenStreetMap extract,
crop expanded regions of interest from georeferenced scenes, tile each
ROI for an ensemble of detection backends, fuse the candidates with
confidence-weighted NMS, then count, compare over time, and report.
"""

from .analytics import (
    ChangeReport,
    CountRecord,
    HeatmapGrid,
    IndicatorRule,
    IndicatorStatus,
    TimeSeries,
    build_time_series,
    change_report,
    count_by_class,
    evaluate_indicators,
    idw_heatmap,
    sort_samples,
)
from .backends import ExternalProcessBackend, MockBackend, ReplayBackend
from .detect import (
    DetectionSet,
    DetectorConfig,
    EnsembleConfig,
    Region,
    TileContext,
    detect_tile,
    read_detections,
    run_detector,
    run_ensemble,
    standard_detectors,
    write_detections,
)
from .evaluation import (
    Annotation,
    MatchSet,
    average_precision,
    map_by_group,
    mape,
    match_detections,
    read_annotations,
    write_annotations,
)
from .fusion import MergeConfig, weighted_nms
from .geo import (
    GeoBox,
    GeoPoint,
    GeoTransform,
    PixelBox,
    enclosing_geobox,
    expand_geobox,
    geo_to_pixel,
    iou,
    pixel_to_geo,
)
from .osm import (
    DEFAULT_TAG_FILTER,
    OsmFeature,
    RoiDescriptor,
    TagFilter,
    filter_strategic,
    parse_osm_xml,
    read_roi_descriptors,
    sample_locations,
    write_roi_descriptors,
)
from .raster import Raster, RoiImage, crop, resize, upsample_to_gsd
from .registry import DEFAULT_REGISTRY, DEFAULT_SIZE_GROUP_MAP, XVIEW_CLASS_NAMES, ClassRegistry
from .synth import DetRng, NoiseModel, SceneSpec, generate_scene, simulate_detector
from .tiling import TilePlan, TileSpec, map_to_roi, plan_axis, plan_tiles

__version__ = "0.1.0"
