"""Object/volunteer label matrix construction.

Marks are joined spatially to building footprints, pre/post footprints are
associated by greedy bbox IoU, and the resulting matrix uses the two extra
cell semantics the aggregators rely on: a cell is *unseen* when the
volunteer never classified the object's subject, and *empty* when they
classified the subject but marked no damage on that object.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import BBox, contains, iou, point_box_distance
from .model import Classification, Footprint, Mark, ResponseLabel

logger = logging.getLogger(__name__)

#: Matrix CSV cell codes, indexed by ResponseLabel value; unseen cells are "U".
CELL_CODES = {ResponseLabel.EMPTY: "E", ResponseLabel.MINOR: "1",
              ResponseLabel.SIGNIFICANT: "2", ResponseLabel.CATASTROPHIC: "3"}
_CODE_TO_LABEL = {v: k for k, v in CELL_CODES.items()}


@dataclass(frozen=True)
class PrePostMatch:
    pre_id: str
    post_id: str
    iou: float


@dataclass(frozen=True)
class ObjectRecord:
    """The unit of aggregation: one post-event footprint, optionally paired
    with its pre-event counterpart."""

    object_id: str
    subject_id: str
    bbox: BBox
    post_footprint_id: str
    pre_footprint_id: str | None = None


@dataclass
class LabelMatrix:
    """Sparse objects x volunteers response table; absent cell means unseen."""

    objects: list[str]
    volunteers: list[str]
    cells: dict[tuple[int, int], ResponseLabel]
    subjects: list[str] | None = None

    def __post_init__(self):
        n, k = len(self.objects), len(self.volunteers)
        for (i, j), label in self.cells.items():
            if not (0 <= i < n and 0 <= j < k):
                raise ValueError(f"cell ({i}, {j}) out of range for {n}x{k} matrix")
            if not isinstance(label, ResponseLabel):
                raise ValueError(f"cell ({i}, {j}) holds {label!r}, not a ResponseLabel")
        if self.subjects is not None and len(self.subjects) != n:
            raise ValueError("subjects list must align with objects")

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.objects), len(self.volunteers))

    def to_dense(self) -> np.ndarray:
        """(N, K) int8 array; -1 encodes unseen."""
        dense = np.full(self.shape, -1, dtype=np.int8)
        for (i, j), label in self.cells.items():
            dense[i, j] = int(label)
        return dense


def associate_pre_post(pre: list[Footprint], post: list[Footprint],
                       match_iou: float) -> list[PrePostMatch]:
    """Greedy one-to-one bbox association between pre- and post-event
    footprints: candidate pairs in descending IoU order, accepted when both
    sides are still free and IoU >= ``match_iou``.
    """
    if not 0.0 < match_iou <= 1.0:
        raise ValueError(f"match_iou must lie in (0, 1], got {match_iou}")
    candidates = []
    for p in pre:
        for q in post:
            if p.subject_id != q.subject_id:
                continue
            overlap = iou(p.bbox, q.bbox)
            if overlap >= match_iou:
                candidates.append((overlap, p.id, q.id))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    matched_pre: set[str] = set()
    matched_post: set[str] = set()
    matches = []
    for overlap, pre_id, post_id in candidates:
        if pre_id in matched_pre or post_id in matched_post:
            continue
        matched_pre.add(pre_id)
        matched_post.add(post_id)
        matches.append(PrePostMatch(pre_id=pre_id, post_id=post_id, iou=overlap))
    return matches


def make_objects(post: list[Footprint],
                 matches: list[PrePostMatch] | None = None) -> list[ObjectRecord]:
    """One aggregation object per post-event footprint."""
    pre_by_post = {m.post_id: m.pre_id for m in (matches or [])}
    return [ObjectRecord(object_id=fp.id, subject_id=fp.subject_id, bbox=fp.bbox,
                         post_footprint_id=fp.id, pre_footprint_id=pre_by_post.get(fp.id))
            for fp in post]


@dataclass
class MarkAssignment:
    """Spatial join of marks to objects, plus the marks nothing claimed."""

    by_object: dict[str, list[Mark]]
    unassigned: list[Mark] = field(default_factory=list)


def assign_marks(marks: list[Mark], objects: list[ObjectRecord],
                 radius: float = 0.0) -> MarkAssignment:
    """Assign each mark to the smallest-area containing bbox in its subject;
    marks outside every bbox fall back to the nearest bbox (boundary
    distance) within ``radius``, otherwise they are tallied as unassigned.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    by_subject: dict[str, list[ObjectRecord]] = {}
    for obj in objects:
        by_subject.setdefault(obj.subject_id, []).append(obj)

    assignment = MarkAssignment(by_object={obj.object_id: [] for obj in objects})
    for mark in marks:
        candidates = by_subject.get(mark.subject_id, [])
        containing = [o for o in candidates if contains(o.bbox, mark.point)]
        if containing:
            target = min(containing, key=lambda o: (o.bbox.area, o.object_id))
        elif radius > 0 and candidates:
            dist, target = min(
                ((point_box_distance(o.bbox, mark.point), o) for o in candidates),
                key=lambda t: (t[0], t[1].object_id),
            )
            if dist > radius:
                target = None
        else:
            target = None
        if target is None:
            assignment.unassigned.append(mark)
        else:
            assignment.by_object[target.object_id].append(mark)
    if assignment.unassigned:
        logger.info("%d of %d marks fell outside every footprint", len(assignment.unassigned), len(marks))
    return assignment


def build_matrix(classifications: list[Classification],
                 objects: list[ObjectRecord],
                 assignment: MarkAssignment) -> LabelMatrix:
    """Build the label matrix.

    Cell (object i in subject m, volunteer k) is unseen when k never
    classified m; otherwise it is the maximum severity among k's marks
    assigned to i, or empty when k classified m but left i unmarked.
    """
    known = {obj.object_id for obj in objects}
    unknown = set(assignment.by_object) - known
    if unknown:
        raise ValueError(f"assignment references unknown objects: {sorted(unknown)[:5]}")

    object_ids = [obj.object_id for obj in objects]
    subjects = [obj.subject_id for obj in objects]
    volunteers = sorted({c.volunteer_id for c in classifications})
    vol_index = {v: j for j, v in enumerate(volunteers)}
    classified: set[tuple[str, str]] = set()
    for c in classifications:
        classified.add((c.volunteer_id, c.subject_id))

    cells: dict[tuple[int, int], ResponseLabel] = {}
    for i, obj in enumerate(objects):
        marks_here = assignment.by_object.get(obj.object_id, [])
        max_severity: dict[str, int] = {}
        for mark in marks_here:
            prev = max_severity.get(mark.volunteer_id, 0)
            max_severity[mark.volunteer_id] = max(prev, int(mark.severity))
        for volunteer, j in vol_index.items():
            if (volunteer, obj.subject_id) not in classified:
                continue  # unseen
            severity = max_severity.get(volunteer)
            cells[(i, j)] = ResponseLabel(severity) if severity else ResponseLabel.EMPTY
    return LabelMatrix(objects=object_ids, volunteers=volunteers, cells=cells, subjects=subjects)


def write_matrix_csv(matrix: LabelMatrix, path) -> None:
    """Serialize as CSV: volunteer ids across the header, object ids down
    the first column, cells coded U/E/1/2/3."""
    dense = matrix.to_dense()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["object_id", *matrix.volunteers])
        for i, object_id in enumerate(matrix.objects):
            row = [object_id]
            for j in range(len(matrix.volunteers)):
                value = dense[i, j]
                row.append("U" if value < 0 else CELL_CODES[ResponseLabel(value)])
            writer.writerow(row)


def read_matrix_csv(path) -> LabelMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "object_id":
            raise ValueError(f"{path}: expected matrix CSV header starting with object_id")
        volunteers = header[1:]
        objects = []
        cells: dict[tuple[int, int], ResponseLabel] = {}
        for i, row in enumerate(reader):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {i + 2}: expected {len(header)} columns, got {len(row)}")
            objects.append(row[0])
            for j, code in enumerate(row[1:]):
                if code == "U":
                    continue
                try:
                    cells[(i, j)] = _CODE_TO_LABEL[code]
                except KeyError:
                    raise ValueError(f"{path}: row {i + 2}: unknown cell code {code!r}") from None
    return LabelMatrix(objects=objects, volunteers=volunteers, cells=cells)
