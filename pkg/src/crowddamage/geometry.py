"""Planar geometry and raster primitives.

Everything here works in two frames: pixel coordinates (column, row; row
grows downward) and the scene frame reached through a six-coefficient
affine geotransform. Contour vertices live on the pixel-corner lattice, so
pixel (c, r) occupies the unit square [c, c+1) x [r, r+1) and the envelope
of a filled rectangle of pixels is exactly its pixel extent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class BBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        for v in (self.min_x, self.min_y, self.max_x, self.max_y):
            if not math.isfinite(v):
                raise ValueError("bbox coordinates must be finite")
        if self.min_x > self.max_x or self.min_y > self.max_y:
            raise ValueError(
                f"bbox min must not exceed max: ({self.min_x}, {self.min_y}, {self.max_x}, {self.max_y})"
            )

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.min_x, self.min_y, self.max_x, self.max_y)


@dataclass(frozen=True)
class Polygon:
    """Simple polygon: exterior ring (implicitly closed) plus optional holes."""

    exterior: tuple[Point2D, ...]
    holes: tuple[tuple[Point2D, ...], ...] = ()

    def __post_init__(self):
        if len(self.exterior) < 3:
            raise ValueError("polygon exterior needs at least 3 vertices")

    @property
    def envelope(self) -> BBox:
        xs = [p.x for p in self.exterior]
        ys = [p.y for p in self.exterior]
        return BBox(min(xs), min(ys), max(xs), max(ys))


@dataclass(frozen=True)
class Geotransform:
    """Affine pixel->scene mapping: x = a*col + b*row + c, y = d*col + e*row + f."""

    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e: float = 1.0
    f: float = 0.0

    def apply(self, col: float, row: float) -> tuple[float, float]:
        return (self.a * col + self.b * row + self.c,
                self.d * col + self.e * row + self.f)

    def apply_point(self, p: Point2D) -> Point2D:
        x, y = self.apply(p.x, p.y)
        return Point2D(x, y)

    @classmethod
    def identity(cls) -> "Geotransform":
        return cls()

    @classmethod
    def from_dict(cls, d: dict) -> "Geotransform":
        try:
            return cls(*(float(d[k]) for k in "abcdef"))
        except KeyError as exc:
            raise ValueError(f"geotransform missing coefficient {exc}") from exc

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in "abcdef"}


@dataclass(frozen=True)
class ProbRaster:
    """Single-channel probability grid, row-major, values in [0, 1]."""

    width: int
    height: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.height, self.width):
            raise ValueError(f"raster values shape {v.shape} != (height={self.height}, width={self.width})")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("raster probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "ProbRaster":
        values = np.asarray(values, dtype=float)
        h, w = values.shape
        return cls(width=w, height=h, values=values)


@dataclass(frozen=True)
class BinaryMask:
    width: int
    height: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.shape != (self.height, self.width):
            raise ValueError(f"mask shape {b.shape} != (height={self.height}, width={self.width})")
        object.__setattr__(self, "bits", b)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes.

    Degenerate (zero-area) boxes are legal: two coincident degenerate boxes
    give 1.0, anything else with a zero-area union gives 0.0.
    """
    iw = min(a.max_x, b.max_x) - max(a.min_x, b.min_x)
    ih = min(a.max_y, b.max_y) - max(a.min_y, b.min_y)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 1.0 if a == b else 0.0
    return inter / union


def contains(b: BBox, p: Point2D) -> bool:
    """Closed-boundary containment: points exactly on an edge are inside."""
    return b.min_x <= p.x <= b.max_x and b.min_y <= p.y <= b.max_y


def point_box_distance(b: BBox, p: Point2D) -> float:
    """Euclidean distance from a point to the box boundary (0 if inside)."""
    dx = max(b.min_x - p.x, 0.0, p.x - b.max_x)
    dy = max(b.min_y - p.y, 0.0, p.y - b.max_y)
    return math.hypot(dx, dy)


def threshold_mask(raster: ProbRaster, theta: float) -> BinaryMask:
    """Binarise a probability raster: bit = (value >= theta)."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {theta}")
    return BinaryMask(width=raster.width, height=raster.height, bits=raster.values >= theta)


# Crack-boundary tracing.
#
# Each foreground pixel contributes one directed unit edge per exposed side,
# oriented so the foreground stays on the walker's right (row axis points
# down). Stitching edges start-to-end yields closed loops; outer borders
# come out with positive shoelace area, holes negative. At saddle corners
# (diagonally touching pixels) the walker prefers the left turn, which keeps
# an 8-connected component on a single loop; such loops touch themselves at
# the pinch vertex but never cross.

def _boundary_edges(bits: np.ndarray) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    padded = np.pad(bits, 1, constant_values=False)
    fg = bits
    top = fg & ~padded[:-2, 1:-1]
    right = fg & ~padded[1:-1, 2:]
    bottom = fg & ~padded[2:, 1:-1]
    left = fg & ~padded[1:-1, :-2]

    edges = []
    rs, cs = np.nonzero(top)
    edges.extend((((int(c), int(r)), (int(c) + 1, int(r))) for r, c in zip(rs, cs)))
    rs, cs = np.nonzero(right)
    edges.extend((((int(c) + 1, int(r)), (int(c) + 1, int(r) + 1)) for r, c in zip(rs, cs)))
    rs, cs = np.nonzero(bottom)
    edges.extend((((int(c) + 1, int(r) + 1), (int(c), int(r) + 1)) for r, c in zip(rs, cs)))
    rs, cs = np.nonzero(left)
    edges.extend((((int(c), int(r) + 1), (int(c), int(r))) for r, c in zip(rs, cs)))
    return edges


def _signed_area(loop: list[tuple[int, int]]) -> float:
    area = 0.0
    n = len(loop)
    for i in range(n):
        x0, y0 = loop[i]
        x1, y1 = loop[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    return area / 2.0


def _simplify_collinear(loop: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    n = len(loop)
    for i in range(n):
        prev = loop[i - 1]
        cur = loop[i]
        nxt = loop[(i + 1) % n]
        d0 = (cur[0] - prev[0], cur[1] - prev[1])
        d1 = (nxt[0] - cur[0], nxt[1] - cur[1])
        if d0 != d1:
            out.append(cur)
    return out


def extract_contours(mask: BinaryMask) -> list[Polygon]:
    """Outer border of each 8-connected foreground component, traced along
    pixel cracks. Holes are dropped; vertices are pixel-corner coordinates.
    """
    bits = mask.bits
    if not bits.any():
        return []

    edges = _boundary_edges(bits)
    outgoing: dict[tuple[int, int], list[tuple[tuple[int, int], tuple[int, int]]]] = {}
    for e in edges:
        outgoing.setdefault(e[0], []).append(e)

    used: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    polygons: list[Polygon] = []
    for start_edge in edges:
        if start_edge in used:
            continue
        loop = []
        edge = start_edge
        while True:
            used.add(edge)
            loop.append(edge[0])
            v = edge[1]
            candidates = [e for e in outgoing.get(v, ()) if e not in used]
            if not candidates:
                break
            if len(candidates) == 1:
                edge = candidates[0]
                continue
            # saddle: prefer the left turn to keep 8-connected components whole
            dx, dy = v[0] - edge[0][0], v[1] - edge[0][1]
            left = (v[0] + dy, v[1] - dx)
            edge = next((e for e in candidates if e[1] == left), candidates[0])
        if _signed_area(loop) <= 0:
            continue  # hole
        ring = _simplify_collinear(loop)
        polygons.append(Polygon(exterior=tuple(Point2D(float(x), float(y)) for x, y in ring)))
    return polygons


def polygon_envelope(polygon: Polygon, gt: Geotransform) -> BBox:
    """Tight axis-aligned envelope of the exterior ring in the scene frame."""
    xs = []
    ys = []
    for p in polygon.exterior:
        x, y = gt.apply(p.x, p.y)
        xs.append(x)
        ys.append(y)
    return BBox(min(xs), min(ys), max(xs), max(ys))


def transform_polygon(polygon: Polygon, gt: Geotransform) -> Polygon:
    """Map every vertex through the geotransform."""
    return Polygon(
        exterior=tuple(gt.apply_point(p) for p in polygon.exterior),
        holes=tuple(tuple(gt.apply_point(p) for p in ring) for ring in polygon.holes),
    )


def filter_min_area(boxes: list[BBox], min_area: float) -> list[BBox]:
    """Drop boxes with area below ``min_area``; order preserved."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    return [b for b in boxes if b.area >= min_area]
