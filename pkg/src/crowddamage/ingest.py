"""Loaders for pipeline inputs: volunteer classifications, footprints
(vector GeoJSON or probability rasters), and expert ground-truth labels.

File formats
------------
classifications: CSV ``volunteer_id,subject_id,kind,x,y`` where kind is one
    of empty/minor/significant/catastrophic; empty rows carry blank x,y.
footprints: GeoJSON FeatureCollection of polygons with properties
    ``subject_id``, ``phase`` and optional ``score``/``id``.
expert labels: CSV ``subject_id,min_x,min_y,max_x,max_y,label``.
rasters: 8-bit single-channel PNG (probability = pixel / 255) plus a JSON
    sidecar ``{a,b,c,d,e,f}`` geotransform.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    BBox,
    Geotransform,
    Point2D,
    Polygon,
    ProbRaster,
    extract_contours,
    polygon_envelope,
    threshold_mask,
    transform_polygon,
)
from .model import (
    Classification,
    ExpertLabel,
    Footprint,
    Mark,
    Phase,
    ResponseLabel,
    parse_label,
    parse_severity,
)

logger = logging.getLogger(__name__)


class IngestError(ValueError):
    """Malformed input data; message carries file location context."""


def _reject(path, where, reason) -> IngestError:
    return IngestError(f"{path}: {where}: {reason}")


def load_classifications(path) -> list[Classification]:
    """Load and merge volunteer classifications.

    Rows sharing (volunteer, subject) are merged by uniting their marks;
    the merged record is declared empty only if every row declared empty.
    A record that declares empty but also carries marks is normalized to
    declared_empty=False with a warning: a placed mark is stronger evidence
    than a checkbox.
    """
    path = Path(path)
    marks: dict[tuple[str, str], list[Mark]] = {}
    declared_empty: dict[tuple[str, str], bool] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"volunteer_id", "subject_id", "kind", "x", "y"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise _reject(path, "header", f"expected columns {sorted(required)}, got {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            volunteer = (row["volunteer_id"] or "").strip()
            subject = (row["subject_id"] or "").strip()
            kind = (row["kind"] or "").strip().lower()
            if not volunteer or not subject:
                raise _reject(path, f"row {row_no}", "volunteer_id and subject_id must be non-empty")
            key = (volunteer, subject)
            marks.setdefault(key, [])
            if kind == "empty":
                if (row["x"] or "").strip() or (row["y"] or "").strip():
                    raise _reject(path, f"row {row_no}", "empty rows must leave x,y blank")
                declared_empty.setdefault(key, True)
                continue
            try:
                severity = parse_severity(kind)
            except ValueError as exc:
                raise _reject(path, f"row {row_no}", str(exc)) from exc
            try:
                point = Point2D(float(row["x"]), float(row["y"]))
            except (TypeError, ValueError) as exc:
                raise _reject(path, f"row {row_no}", f"bad coordinates x={row['x']!r} y={row['y']!r}") from exc
            marks[key].append(Mark(volunteer, subject, point, severity))

    out = []
    for key in sorted(marks):
        volunteer, subject = key
        key_marks = tuple(marks[key])
        declared = declared_empty.get(key, False)
        if declared and key_marks:
            logger.warning("classification (%s, %s) declared empty but carries marks; keeping marks",
                           volunteer, subject)
            declared = False
        out.append(Classification(volunteer, subject, key_marks, declared))
    return out


def load_footprints_vector(path) -> list[Footprint]:
    """Load pre-vectorized footprints from a GeoJSON FeatureCollection."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise _reject(path, "document", f"expected FeatureCollection, got {doc.get('type')!r}")
    footprints = []
    for idx, feature in enumerate(doc.get("features", [])):
        where = f"feature {idx}"
        geom = feature.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise _reject(path, where, f"expected Polygon geometry, got {geom.get('type')!r}")
        props = feature.get("properties") or {}
        subject = props.get("subject_id")
        if not subject:
            raise _reject(path, where, "missing subject_id property")
        try:
            phase = Phase(str(props.get("phase", "")).lower())
        except ValueError:
            raise _reject(path, where, f"phase must be pre|post, got {props.get('phase')!r}") from None
        rings = geom.get("coordinates") or []
        if not rings or len(rings[0]) < 3:
            raise _reject(path, where, "polygon needs an exterior ring with >= 3 vertices")
        exterior = _ring_points(rings[0])
        holes = tuple(_ring_points(r) for r in rings[1:])
        polygon = Polygon(exterior=exterior, holes=holes)
        fid = str(props.get("id") or feature.get("id") or f"{subject}-{idx}")
        score = props.get("score")
        footprints.append(Footprint(
            id=fid,
            subject_id=str(subject),
            polygon=polygon,
            bbox=polygon.envelope,
            phase=phase,
            score=None if score is None else float(score),
        ))
    return footprints


def _ring_points(ring) -> tuple[Point2D, ...]:
    pts = [Point2D(float(x), float(y)) for x, y in ring]
    if len(pts) > 1 and pts[0] == pts[-1]:  # GeoJSON rings repeat the first vertex
        pts = pts[:-1]
    return tuple(pts)


def read_prob_raster(png_path, geotransform_path) -> tuple[ProbRaster, Geotransform]:
    """Read a probability raster PNG and its sidecar geotransform."""
    png_path = Path(png_path)
    try:
        with Image.open(png_path) as img:
            if img.mode != "L":
                raise _reject(png_path, "image", f"expected 8-bit single-channel PNG, got mode {img.mode!r}")
            arr = np.asarray(img, dtype=float) / 255.0
    except (OSError, SyntaxError) as exc:
        raise _reject(png_path, "image", f"unreadable PNG: {exc}") from exc
    with open(geotransform_path, encoding="utf-8") as fh:
        gt = Geotransform.from_dict(json.load(fh))
    return ProbRaster.from_array(arr), gt


def load_footprints_raster(png_path, geotransform_path, theta: float,
                           min_area: float, subject_id: str,
                           phase: Phase) -> list[Footprint]:
    """Extract footprints from a probability raster.

    Composition: threshold -> trace contours -> envelope under the
    geotransform -> drop components below ``min_area`` (scene units^2).
    """
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    raster, gt = read_prob_raster(png_path, geotransform_path)
    mask = threshold_mask(raster, theta)
    contours = extract_contours(mask)
    footprints = []
    for contour in contours:
        box = polygon_envelope(contour, gt)
        if box.area < min_area:
            continue
        footprints.append(Footprint(
            id=f"{subject_id}-{phase.value}-{len(footprints)}",
            subject_id=subject_id,
            polygon=transform_polygon(contour, gt),
            bbox=box,
            phase=phase,
        ))
    return footprints


def load_expert_labels(path) -> list[ExpertLabel]:
    """Load expert ground-truth boxes from CSV."""
    path = Path(path)
    labels = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"subject_id", "min_x", "min_y", "max_x", "max_y", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise _reject(path, "header", f"expected columns {sorted(required)}, got {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            where = f"row {row_no}"
            subject = (row["subject_id"] or "").strip()
            if not subject:
                raise _reject(path, where, "subject_id must be non-empty")
            try:
                label = parse_label(row["label"])
            except ValueError as exc:
                raise _reject(path, where, str(exc)) from exc
            try:
                bbox = BBox(float(row["min_x"]), float(row["min_y"]),
                            float(row["max_x"]), float(row["max_y"]))
            except (TypeError, ValueError) as exc:
                raise _reject(path, where, f"bad bbox: {exc}") from exc
            labels.append(ExpertLabel(bbox=bbox, subject_id=subject, label=label))
    return labels


def load_detections(path) -> list:
    """Load detections from GeoJSON: polygon features with ``subject_id``
    and optional ``score`` (default 1.0) / ``label`` properties. Footprint
    files load fine here; they come out class-agnostic."""
    from .evaluate import Detection

    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise _reject(path, "document", f"expected FeatureCollection, got {doc.get('type')!r}")
    detections = []
    for idx, feature in enumerate(doc.get("features", [])):
        where = f"feature {idx}"
        geom = feature.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise _reject(path, where, f"expected Polygon geometry, got {geom.get('type')!r}")
        props = feature.get("properties") or {}
        subject = props.get("subject_id")
        if not subject:
            raise _reject(path, where, "missing subject_id property")
        rings = geom.get("coordinates") or []
        if not rings or len(rings[0]) < 3:
            raise _reject(path, where, "polygon needs an exterior ring with >= 3 vertices")
        polygon = Polygon(exterior=_ring_points(rings[0]))
        label_text = props.get("label") or props.get("hard_label")
        try:
            label = None if label_text is None else parse_label(str(label_text))
            score = float(props.get("score", 1.0))
        except ValueError as exc:
            raise _reject(path, where, str(exc)) from exc
        detections.append(Detection(bbox=polygon.envelope, subject_id=str(subject),
                                    score=score, label=label))
    return detections


def load_results_geojson(path):
    """Load an aggregation results file back as object records plus their
    consensus labels (for downstream exports and evaluation)."""
    from .matrix import ObjectRecord

    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise _reject(path, "document", f"expected FeatureCollection, got {doc.get('type')!r}")
    objects = []
    labels = []
    for idx, feature in enumerate(doc.get("features", [])):
        where = f"feature {idx}"
        props = feature.get("properties") or {}
        geom = feature.get("geometry") or {}
        rings = geom.get("coordinates") or []
        for key in ("object_id", "subject_id", "hard_label"):
            if key not in props:
                raise _reject(path, where, f"missing {key} property")
        if geom.get("type") != "Polygon" or not rings:
            raise _reject(path, where, "expected Polygon geometry")
        bbox = Polygon(exterior=_ring_points(rings[0])).envelope
        object_id = str(props["object_id"])
        objects.append(ObjectRecord(object_id=object_id, subject_id=str(props["subject_id"]),
                                    bbox=bbox, post_footprint_id=object_id))
        try:
            labels.append(parse_label(str(props["hard_label"])))
        except ValueError as exc:
            raise _reject(path, where, str(exc)) from exc
    return objects, labels


def load_results_csv_labels(path) -> dict[str, ResponseLabel]:
    """Read object_id -> hard label from an aggregation results CSV."""
    path = Path(path)
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"object_id", "hard_label"}.issubset(reader.fieldnames):
            raise _reject(path, "header", f"expected object_id and hard_label columns, got {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            try:
                labels[row["object_id"]] = parse_label(row["hard_label"])
            except ValueError as exc:
                raise _reject(path, f"row {row_no}", str(exc)) from exc
    return labels


def load_truth_csv(path) -> dict[str, ResponseLabel]:
    """Load per-object ground truth (``object_id,label``)."""
    path = Path(path)
    truth = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"object_id", "label"}.issubset(reader.fieldnames):
            raise _reject(path, "header", f"expected columns ['label', 'object_id'], got {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            try:
                truth[row["object_id"]] = parse_label(row["label"])
            except ValueError as exc:
                raise _reject(path, f"row {row_no}", str(exc)) from exc
    return truth
