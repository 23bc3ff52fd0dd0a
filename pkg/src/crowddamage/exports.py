"""Serialization of pipeline artifacts.

All writers are deterministic (stable ordering, repr-based floats) and go
through an atomic temp-file + rename so a failed run never leaves a partial
output behind.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

from .aggregate import AggregationResult, VolunteerPosterior
from .evaluate import CocoReport, F1Report, VocReport
from .geometry import BBox
from .matrix import ObjectRecord
from .model import Footprint, ResponseLabel, label_name


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def _bbox_ring(b: BBox) -> list[list[float]]:
    return [[b.min_x, b.min_y], [b.max_x, b.min_y], [b.max_x, b.max_y],
            [b.min_x, b.max_y], [b.min_x, b.min_y]]


def footprints_geojson(footprints: list[Footprint]) -> dict:
    features = []
    for fp in footprints:
        ring = [[p.x, p.y] for p in fp.polygon.exterior]
        ring.append(ring[0])
        rings = [ring]
        for hole in fp.polygon.holes:
            hr = [[p.x, p.y] for p in hole]
            hr.append(hr[0])
            rings.append(hr)
        props = {"id": fp.id, "subject_id": fp.subject_id, "phase": fp.phase.value}
        if fp.score is not None:
            props["score"] = fp.score
        features.append({"type": "Feature", "properties": props,
                         "geometry": {"type": "Polygon", "coordinates": rings}})
    return {"type": "FeatureCollection", "features": features}


def results_geojson(result: AggregationResult, objects: list[ObjectRecord]) -> dict:
    """Aggregation output as one bbox-polygon feature per object."""
    by_id = {obj.object_id: obj for obj in objects}
    features = []
    for i, object_id in enumerate(result.objects):
        obj = by_id[object_id]
        probs = result.class_probs[i]
        props = {
            "object_id": object_id,
            "subject_id": obj.subject_id,
            "hard_label": label_name(result.hard_labels[i]),
            "n_responses": int(result.response_counts[i].sum()),
            "no_response": bool(result.no_response[i]),
        }
        for label in ResponseLabel:
            props[f"p_{label_name(label)}"] = float(probs[int(label)])
        features.append({"type": "Feature", "properties": props,
                         "geometry": {"type": "Polygon", "coordinates": [_bbox_ring(obj.bbox)]}})
    return {"type": "FeatureCollection", "features": features}


def results_csv_text(result: AggregationResult, objects: list[ObjectRecord]) -> str:
    by_id = {obj.object_id: obj for obj in objects}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["object_id", "subject_id", "hard_label", "n_responses",
                     *[f"p_{label_name(c)}" for c in ResponseLabel]])
    for i, object_id in enumerate(result.objects):
        obj = by_id[object_id]
        writer.writerow([
            object_id, obj.subject_id, label_name(result.hard_labels[i]),
            int(result.response_counts[i].sum()),
            *[repr(float(p)) for p in result.class_probs[i]],
        ])
    return buf.getvalue()


def posteriors_json(posteriors: list[VolunteerPosterior]) -> list[dict]:
    return [{"volunteer_id": p.volunteer_id,
             "alpha": [[float(v) for v in row] for row in p.alpha]}
            for p in posteriors]


def coco_annotations(objects: list[ObjectRecord], labels: list[ResponseLabel]) -> dict:
    """COCO-format annotation export: categories 1..4 for
    empty/minor/significant/catastrophic, bbox as [x, y, width, height].

    Image sizes are not part of the scene model, so each image entry carries
    the ceiling of its objects' envelope instead.
    """
    subjects = sorted({obj.subject_id for obj in objects})
    subject_index = {s: i + 1 for i, s in enumerate(subjects)}
    extent: dict[str, list[float]] = {s: [0.0, 0.0] for s in subjects}
    for obj in objects:
        extent[obj.subject_id][0] = max(extent[obj.subject_id][0], obj.bbox.max_x)
        extent[obj.subject_id][1] = max(extent[obj.subject_id][1], obj.bbox.max_y)
    images = [{"id": subject_index[s], "file_name": f"{s}.png",
               "width": int(math.ceil(extent[s][0])), "height": int(math.ceil(extent[s][1]))}
              for s in subjects]
    categories = [{"id": int(label) + 1, "name": label_name(label)} for label in ResponseLabel]
    annotations = []
    for i, (obj, label) in enumerate(zip(objects, labels)):
        b = obj.bbox
        annotations.append({
            "id": i + 1,
            "image_id": subject_index[obj.subject_id],
            "category_id": int(label) + 1,
            "bbox": [b.min_x, b.min_y, b.width, b.height],
            "area": b.area,
            "iscrowd": 0,
        })
    return {"images": images, "annotations": annotations, "categories": categories}


# --------------------------------------------------------------------------
# plain-text report tables
# --------------------------------------------------------------------------

def _table(rows: list[list[str]]) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [cell.ljust(widths[c]) if c == 0 else cell.rjust(widths[c])
                 for c, cell in enumerate(row)]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def detection_table(reports: dict[str, VocReport]) -> str:
    rows = [["", "AP50", "F1", "Precision", "Recall"]]
    for name, rep in reports.items():
        rows.append([name, f"{rep.ap:.1f}", f"{rep.f1:.1f}",
                     f"{rep.precision:.1f}", f"{rep.recall:.1f}"])
    return _table(rows)


def classification_table(reports: dict[str, F1Report]) -> str:
    first = next(iter(reports.values()))
    header = ["model", f"average / {first.total_support}"]
    header += [f"{label_name(c)} / {first.support[c]}" for c in ResponseLabel]
    rows = [header]
    for name, rep in reports.items():
        row = [name, f"{rep.weighted_average:.0f}"]
        row += [f"{rep.per_class[c]:.0f}" for c in ResponseLabel]
        rows.append(row)
    return _table(rows)


def coco_table(report: CocoReport) -> str:
    rows = [["AP", "AP50", "AP75", "APs", "APm", "APl"],
            [f"{v:.3f}" for v in (report.ap, report.ap50, report.ap75,
                                  report.ap_small, report.ap_medium, report.ap_large)]]
    return _table(rows)


def sweep_table(rows_in: list[tuple[float, float]], best_theta: float) -> str:
    rows = [["theta", "F1"]]
    for theta, f1 in rows_in:
        marker = " *" if theta == best_theta else ""
        rows.append([f"{theta:.3f}", f"{f1:.1f}{marker}"])
    return _table(rows)
