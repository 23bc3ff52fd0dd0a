"""Crowdsourced building-damage mapping: spatial join of volunteer point
marks to detected footprints, label-matrix construction with unseen/empty
semantics, consensus aggregation (weighted voting, confusion-matrix EM,
variational Bayes), detection/classification metrics, and a synthetic-crowd
simulator."""

from .aggregate import (
    AggregationConfig,
    AggregationResult,
    DawidSkeneOutput,
    IbccOutput,
    IbccPriors,
    MVWeights,
    VolunteerPosterior,
    dawid_skene_em,
    digamma,
    ibcc_vb,
    majority_vote,
)
from .evaluate import (
    CocoReport,
    Detection,
    F1Report,
    PRCurve,
    VocReport,
    classification_f1,
    coco_ap,
    match_detections,
    voc_metrics,
)
from .geometry import (
    BBox,
    BinaryMask,
    Geotransform,
    Point2D,
    Polygon,
    ProbRaster,
    contains,
    extract_contours,
    filter_min_area,
    iou,
    polygon_envelope,
    threshold_mask,
)
from .ingest import (
    IngestError,
    load_classifications,
    load_expert_labels,
    load_footprints_raster,
    load_footprints_vector,
)
from .matrix import (
    LabelMatrix,
    MarkAssignment,
    ObjectRecord,
    PrePostMatch,
    assign_marks,
    associate_pre_post,
    build_matrix,
    make_objects,
)
from .model import (
    Classification,
    ExpertLabel,
    Footprint,
    Mark,
    Phase,
    ResponseLabel,
    Severity,
    severity_from_damage_fraction,
)
from .simulate import SimConfig, SimWorld, export_world, generate

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
