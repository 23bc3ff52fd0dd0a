"""Core domain types shared across the pipeline.

Severity classes follow the deployment convention: minor damage covers less
than 20% of a structure, significant 20-60%, catastrophic over 60%; empty
means no damage was marked on an otherwise seen object.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

from .geometry import BBox, Point2D, Polygon


class Severity(IntEnum):
    """Damage severity of a single volunteer mark."""

    MINOR = 1
    SIGNIFICANT = 2
    CATASTROPHIC = 3


class ResponseLabel(IntEnum):
    """A volunteer's per-object response; Empty ranks below all damage."""

    EMPTY = 0
    MINOR = 1
    SIGNIFICANT = 2
    CATASTROPHIC = 3


#: All response labels in severity order; index == enum value.
RESPONSE_LABELS = (ResponseLabel.EMPTY, ResponseLabel.MINOR,
                   ResponseLabel.SIGNIFICANT, ResponseLabel.CATASTROPHIC)

N_CLASSES = len(RESPONSE_LABELS)

_LABEL_NAMES = {
    ResponseLabel.EMPTY: "empty",
    ResponseLabel.MINOR: "minor",
    ResponseLabel.SIGNIFICANT: "significant",
    ResponseLabel.CATASTROPHIC: "catastrophic",
}
_NAMES_TO_LABEL = {v: k for k, v in _LABEL_NAMES.items()}


def label_name(label: ResponseLabel) -> str:
    return _LABEL_NAMES[label]


def parse_label(name: str) -> ResponseLabel:
    try:
        return _NAMES_TO_LABEL[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown label {name!r}; expected one of {sorted(_NAMES_TO_LABEL)}") from None


def parse_severity(name: str) -> Severity:
    label = parse_label(name)
    if label is ResponseLabel.EMPTY:
        raise ValueError("'empty' is not a mark severity")
    return Severity(int(label))


def severity_from_damage_fraction(fraction: float) -> ResponseLabel:
    """Map a damaged-structure fraction to its class.

    0 -> empty, (0, 0.2) -> minor, [0.2, 0.6] -> significant, (0.6, 1] -> catastrophic.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"damage fraction must lie in [0, 1], got {fraction}")
    if fraction == 0.0:
        return ResponseLabel.EMPTY
    if fraction < 0.2:
        return ResponseLabel.MINOR
    if fraction <= 0.6:
        return ResponseLabel.SIGNIFICANT
    return ResponseLabel.CATASTROPHIC


class Phase(str, Enum):
    PRE = "pre"
    POST = "post"


@dataclass(frozen=True)
class Mark:
    """One point a volunteer placed on one image tile."""

    volunteer_id: str
    subject_id: str
    point: Point2D
    severity: Severity

    def __post_init__(self):
        if not self.volunteer_id or not self.subject_id:
            raise ValueError("mark needs non-empty volunteer and subject ids")


@dataclass(frozen=True)
class Classification:
    """One volunteer's session on one subject: marks, or an explicit all-clear."""

    volunteer_id: str
    subject_id: str
    marks: tuple[Mark, ...] = ()
    declared_empty: bool = False

    def __post_init__(self):
        if self.declared_empty and self.marks:
            raise ValueError("declared_empty classification cannot carry marks")


@dataclass(frozen=True)
class Footprint:
    """A detected building outline with its axis-aligned bounding box."""

    id: str
    subject_id: str
    polygon: Polygon
    bbox: BBox
    phase: Phase
    score: float | None = None

    def __post_init__(self):
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"footprint score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class ExpertLabel:
    """Expert-annotated ground-truth box with its damage class."""

    bbox: BBox
    subject_id: str
    label: ResponseLabel
