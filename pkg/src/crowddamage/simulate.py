"""Synthetic crowd generator with planted ground truth.

Footprints sit on a regular grid of 10x10-unit boxes so mark assignment is
exact and the planted response bookkeeping can be compared cell-for-cell
against the built label matrix. Volunteer responses are sampled row-wise
from per-volunteer confusion matrices; subject visibility realizes unseen
cells and a sampled empty response simply emits no mark.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exports import footprints_geojson, write_json
from .geometry import BBox, Point2D, Polygon
from .matrix import MarkAssignment, ObjectRecord, make_objects
from .model import (
    N_CLASSES,
    Classification,
    Footprint,
    Mark,
    Phase,
    ResponseLabel,
    Severity,
    label_name,
    severity_from_damage_fraction,
)

_BOX_SIZE = 10.0
_BOX_PITCH = 20.0
_GRID_COLS = 5

#: Uniform damage-fraction band per class (empty pins to exactly zero).
_FRACTION_BANDS = {
    ResponseLabel.EMPTY: (0.0, 0.0),
    ResponseLabel.MINOR: (0.01, 0.19),
    ResponseLabel.SIGNIFICANT: (0.2, 0.6),
    ResponseLabel.CATASTROPHIC: (0.61, 1.0),
}


@dataclass
class SimConfig:
    n_objects: int = 200
    n_volunteers: int = 20
    class_prior: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    reliable_fraction: float = 0.6
    reliable_diagonal: float = 0.8
    spammer_damage_bias: float = 0.0  # 0 = uniform spammers; 1 = always claims damage
    confusions: np.ndarray | None = None  # explicit (n_volunteers, 4, 4) override
    visibility: float = 0.4
    objects_per_subject: int = 10
    mark_jitter: float = 3.0
    duplicate_mark_rate: float = 0.0  # chance a damage response emits a second mark
    seed: int = 0

    def __post_init__(self):
        if self.n_objects < 1 or self.n_volunteers < 1 or self.objects_per_subject < 1:
            raise ValueError("counts must be positive")
        prior = np.asarray(self.class_prior, dtype=float)
        if prior.shape != (N_CLASSES,) or prior.min() < 0 or abs(prior.sum() - 1.0) > 1e-9:
            raise ValueError("class_prior must be 4 nonnegative values summing to 1")
        for name in ("reliable_fraction", "reliable_diagonal", "spammer_damage_bias",
                     "visibility", "duplicate_mark_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.mark_jitter < 0:
            raise ValueError("mark_jitter must be >= 0")
        if self.confusions is not None:
            conf = np.asarray(self.confusions, dtype=float)
            if conf.shape != (self.n_volunteers, N_CLASSES, N_CLASSES):
                raise ValueError(f"explicit confusions must have shape "
                                 f"{(self.n_volunteers, N_CLASSES, N_CLASSES)}")
            if conf.min() < 0 or np.abs(conf.sum(axis=2) - 1.0).max() > 1e-9:
                raise ValueError("confusion rows must be distributions")
            self.confusions = conf


@dataclass
class SimWorld:
    config: SimConfig
    subjects: list[str]
    footprints: list[Footprint]
    objects: list[ObjectRecord]
    true_labels: dict[str, ResponseLabel]
    damage_fractions: dict[str, float]
    volunteers: list[str]
    confusions: np.ndarray                 # (K, 4, 4) planted rows
    classifications: list[Classification]
    responses: np.ndarray = field(repr=False)  # (N, K) int8 bookkeeping, -1 unseen
    _mark_provenance: list[tuple[str, Mark]] = field(default_factory=list, repr=False)

    def truth_array(self) -> np.ndarray:
        return np.array([int(self.true_labels[o.object_id]) for o in self.objects], dtype=np.int8)

    def planted_assignment(self) -> MarkAssignment:
        """The mark-to-object join the generator intended (exact, since every
        mark is emitted for a specific object)."""
        by_object: dict[str, list[Mark]] = {o.object_id: [] for o in self.objects}
        for (object_id, mark) in self._mark_provenance:
            by_object[object_id].append(mark)
        return MarkAssignment(by_object=by_object)


def make_confusions(config: SimConfig) -> np.ndarray:
    """Planted confusion rows: the first ``reliable_fraction`` of volunteers
    put ``reliable_diagonal`` mass on the true class, the rest are spammers
    (uniform rows, optionally biased toward claiming damage)."""
    if config.confusions is not None:
        return config.confusions
    n_reliable = round(config.reliable_fraction * config.n_volunteers)
    reliable = np.full((N_CLASSES, N_CLASSES), (1.0 - config.reliable_diagonal) / (N_CLASSES - 1))
    np.fill_diagonal(reliable, config.reliable_diagonal)
    uniform = np.full((N_CLASSES, N_CLASSES), 1.0 / N_CLASSES)
    overmark = np.tile(np.array([0.0, 1 / 3, 1 / 3, 1 / 3]), (N_CLASSES, 1))
    spammer = (1.0 - config.spammer_damage_bias) * uniform + config.spammer_damage_bias * overmark
    rows = [reliable if k < n_reliable else spammer for k in range(config.n_volunteers)]
    return np.stack(rows)


def _grid_box(index_in_subject: int) -> BBox:
    col = index_in_subject % _GRID_COLS
    row = index_in_subject // _GRID_COLS
    x0 = col * _BOX_PITCH
    y0 = row * _BOX_PITCH
    return BBox(x0, y0, x0 + _BOX_SIZE, y0 + _BOX_SIZE)


def _box_polygon(b: BBox) -> Polygon:
    return Polygon(exterior=(
        Point2D(b.min_x, b.min_y), Point2D(b.max_x, b.min_y),
        Point2D(b.max_x, b.max_y), Point2D(b.min_x, b.max_y),
    ))


def generate(config: SimConfig) -> SimWorld:
    """Build a deterministic synthetic world from the config seed."""
    rng = np.random.default_rng(config.seed)
    n_subjects = -(-config.n_objects // config.objects_per_subject)
    id_width = max(3, len(str(n_subjects - 1)))
    subjects = [f"s{m:0{id_width}d}" for m in range(n_subjects)]
    vol_width = max(2, len(str(config.n_volunteers - 1)))
    volunteers = [f"v{k:0{vol_width}d}" for k in range(config.n_volunteers)]

    footprints = []
    for i in range(config.n_objects):
        subject = subjects[i // config.objects_per_subject]
        local = i % config.objects_per_subject
        box = _grid_box(local)
        footprints.append(Footprint(
            id=f"{subject}-{local}", subject_id=subject,
            polygon=_box_polygon(box), bbox=box, phase=Phase.POST,
        ))
    objects = make_objects(footprints)

    prior = np.asarray(config.class_prior, dtype=float)
    truth_idx = rng.choice(N_CLASSES, size=config.n_objects, p=prior)
    true_labels = {}
    damage_fractions = {}
    for obj, t in zip(objects, truth_idx):
        label = ResponseLabel(int(t))
        lo, hi = _FRACTION_BANDS[label]
        fraction = float(lo if lo == hi else rng.uniform(lo, hi))
        assert severity_from_damage_fraction(fraction) == label
        true_labels[obj.object_id] = label
        damage_fractions[obj.object_id] = fraction

    confusions = make_confusions(config)
    objects_by_subject: dict[str, list[tuple[int, ObjectRecord]]] = {}
    for i, obj in enumerate(objects):
        objects_by_subject.setdefault(obj.subject_id, []).append((i, obj))

    responses = np.full((config.n_objects, config.n_volunteers), -1, dtype=np.int8)
    classifications = []
    provenance: list[tuple[str, Mark]] = []
    for k, volunteer in enumerate(volunteers):
        rows = confusions[k]
        for subject in subjects:
            if rng.random() >= config.visibility:
                continue
            marks = []
            for i, obj in objects_by_subject[subject]:
                truth = int(truth_idx[i])
                sampled = int(rng.choice(N_CLASSES, p=rows[truth]))
                emitted = [sampled]
                if sampled != int(ResponseLabel.EMPTY) and rng.random() < config.duplicate_mark_rate:
                    emitted.append(int(rng.integers(1, N_CLASSES)))
                responses[i, k] = max(emitted)
                for label in emitted:
                    if label == int(ResponseLabel.EMPTY):
                        continue
                    center_x = (obj.bbox.min_x + obj.bbox.max_x) / 2.0
                    center_y = (obj.bbox.min_y + obj.bbox.max_y) / 2.0
                    jitter = config.mark_jitter
                    dx = float(rng.uniform(-jitter, jitter)) if jitter else 0.0
                    dy = float(rng.uniform(-jitter, jitter)) if jitter else 0.0
                    mark = Mark(volunteer_id=volunteer, subject_id=subject,
                                point=Point2D(center_x + dx, center_y + dy),
                                severity=Severity(label))
                    marks.append(mark)
                    provenance.append((obj.object_id, mark))
            classifications.append(Classification(
                volunteer_id=volunteer, subject_id=subject,
                marks=tuple(marks), declared_empty=not marks,
            ))

    world = SimWorld(config=config, subjects=subjects, footprints=footprints,
                     objects=objects, true_labels=true_labels,
                     damage_fractions=damage_fractions, volunteers=volunteers,
                     confusions=confusions, classifications=classifications,
                     responses=responses)
    world._mark_provenance = provenance
    return world


def export_world(world: SimWorld, out_dir) -> dict[str, Path]:
    """Write the world in the ingest formats plus ``truth.csv``; the files
    round-trip losslessly through the loaders."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "classifications": out_dir / "classifications.csv",
        "footprints": out_dir / "footprints.geojson",
        "truth": out_dir / "truth.csv",
    }

    with open(paths["classifications"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["volunteer_id", "subject_id", "kind", "x", "y"])
        for c in world.classifications:
            if c.declared_empty:
                writer.writerow([c.volunteer_id, c.subject_id, "empty", "", ""])
            for mark in c.marks:
                writer.writerow([mark.volunteer_id, mark.subject_id,
                                 label_name(ResponseLabel(int(mark.severity))),
                                 repr(mark.point.x), repr(mark.point.y)])

    write_json(paths["footprints"], footprints_geojson(world.footprints))

    with open(paths["truth"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["object_id", "label"])
        for obj in world.objects:
            writer.writerow([obj.object_id, label_name(world.true_labels[obj.object_id])])
    return paths
