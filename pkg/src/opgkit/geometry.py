"""Plane geometry for boxes and polygon masks.

Implements the spatial primitives the pipeline needs: box IoU, exact
minimum contour distance between two simple polygons (segment-to-segment,
zero when the polygons intersect or touch), and disease-to-tooth
assignment (IoU first, center-distance fallback below a threshold).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Tuple

_EPS = 1e-12


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite box: {vals}")
        if min(vals) < 0:
            raise GeometryError(f"negative coordinate: {vals}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise GeometryError(f"inverted box: {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def encode(self) -> list:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @staticmethod
    def decode(obj) -> "BBox":
        return BBox(float(obj[0]), float(obj[1]), float(obj[2]), float(obj[3]))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when both are degenerate."""
    ix = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def center_distance(a: BBox, b: BBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


# ---------------------------------------------------------------------------
# Segment primitives


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment(ax, ay, bx, by, px, py) -> bool:
    """Whether p lies on segment ab (assuming collinear within tolerance)."""
    return (
        min(ax, bx) - _EPS <= px <= max(ax, bx) + _EPS
        and min(ay, by) - _EPS <= py <= max(ay, by) + _EPS
    )


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Whether segments p1p2 and q1q2 share at least one point (touching counts)."""
    d1 = _orient(*q1, *q2, *p1)
    d2 = _orient(*q1, *q2, *p2)
    d3 = _orient(*p1, *p2, *q1)
    d4 = _orient(*p1, *p2, *q2)
    if ((d1 > _EPS and d2 < -_EPS) or (d1 < -_EPS and d2 > _EPS)) and (
        (d3 > _EPS and d4 < -_EPS) or (d3 < -_EPS and d4 > _EPS)
    ):
        return True
    if abs(d1) <= _EPS and _on_segment(*q1, *q2, *p1):
        return True
    if abs(d2) <= _EPS and _on_segment(*q1, *q2, *p2):
        return True
    if abs(d3) <= _EPS and _on_segment(*p1, *p2, *q1):
        return True
    if abs(d4) <= _EPS and _on_segment(*p1, *p2, *q2):
        return True
    return False


def point_segment_distance(px, py, ax, ay, bx, by) -> float:
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 <= _EPS:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / seg2
    t = max(0.0, min(1.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def segment_segment_distance(p1, p2, q1, q2) -> float:
    if segments_intersect(p1, p2, q1, q2):
        return 0.0
    return min(
        point_segment_distance(*p1, *q1, *q2),
        point_segment_distance(*p2, *q1, *q2),
        point_segment_distance(*q1, *p1, *p2),
        point_segment_distance(*q2, *p1, *p2),
    )


# ---------------------------------------------------------------------------
# Polygons


@dataclass(frozen=True)
class PolygonMask:
    """Simple (non-self-intersecting) polygon, implicitly closed."""

    vertices: tuple  # ((x, y), ...)

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise GeometryError(f"polygon needs >= 3 vertices, got {len(verts)}")
        if not self._is_simple():
            raise GeometryError("polygon is self-intersecting; upstream mask is rejected, not repaired")

    def edges(self):
        verts = self.vertices
        n = len(verts)
        for i in range(n):
            yield verts[i], verts[(i + 1) % n]

    def _is_simple(self) -> bool:
        verts = self.vertices
        n = len(verts)
        edges = list(self.edges())
        for i in range(n):
            a1, a2 = edges[i]
            if math.hypot(a2[0] - a1[0], a2[1] - a1[1]) <= _EPS:
                return False
            for j in range(i + 1, n):
                adjacent = j == i + 1 or (i == 0 and j == n - 1)
                b1, b2 = edges[j]
                if adjacent:
                    # Shared endpoint is fine; any other overlap is not.
                    shared = a2 if j == i + 1 else a1
                    other_a = a1 if j == i + 1 else a2
                    other_b = b2 if j == i + 1 else b1
                    if segments_intersect(a1, a2, b1, b2):
                        # Reject if the non-shared endpoints touch the other edge.
                        if point_segment_distance(*other_a, *b1, *b2) <= 1e-9:
                            return False
                        if point_segment_distance(*other_b, *a1, *a2) <= 1e-9:
                            return False
                    continue
                if segments_intersect(a1, a2, b1, b2):
                    return False
        return True

    def contains_point(self, x: float, y: float) -> bool:
        """Even-odd rule; boundary points count as inside."""
        for a, b in self.edges():
            if point_segment_distance(x, y, *a, *b) <= 1e-9:
                return True
        inside = False
        verts = self.vertices
        n = len(verts)
        j = n - 1
        for i in range(n):
            xi, yi = verts[i]
            xj, yj = verts[j]
            if (yi > y) != (yj > y):
                x_cross = xi + (y - yi) * (xj - xi) / (yj - yi)
                if x < x_cross:
                    inside = not inside
            j = i
        return inside

    def scaled(self, s: float) -> "PolygonMask":
        return PolygonMask(tuple((x * s, y * s) for x, y in self.vertices))

    def encode(self) -> list:
        return [[x, y] for x, y in self.vertices]

    @staticmethod
    def decode(obj) -> "PolygonMask":
        return PolygonMask(tuple((float(p[0]), float(p[1])) for p in obj))

    @staticmethod
    def from_bbox(box: BBox) -> "PolygonMask":
        return PolygonMask(
            ((box.x_min, box.y_min), (box.x_max, box.y_min), (box.x_max, box.y_max), (box.x_min, box.y_max))
        )


def polygons_intersect(a: PolygonMask, b: PolygonMask) -> bool:
    """Whether the closed regions share at least one point (touching counts)."""
    for ea in a.edges():
        for eb in b.edges():
            if segments_intersect(ea[0], ea[1], eb[0], eb[1]):
                return True
    if a.contains_point(*b.vertices[0]):
        return True
    if b.contains_point(*a.vertices[0]):
        return True
    return False


def min_contour_distance(a: PolygonMask, b: PolygonMask) -> float:
    """Minimum Euclidean distance between the two polygon boundaries,
    minimized over the continuous contours (segment-to-segment); 0 when the
    polygons intersect or touch."""
    if polygons_intersect(a, b):
        return 0.0
    return min(
        segment_segment_distance(ea[0], ea[1], eb[0], eb[1])
        for ea in a.edges()
        for eb in b.edges()
    )


# ---------------------------------------------------------------------------
# Disease-to-tooth assignment

METHOD_IOU = "iou"
METHOD_CENTER = "center-fallback"


@dataclass(frozen=True)
class Assignment:
    tooth: int
    method: str  # METHOD_IOU or METHOD_CENTER
    score: float  # IoU for METHOD_IOU, center distance in pixels otherwise


def assign_finding_to_tooth(finding: BBox, teeth: Mapping[int, BBox], tau_iou: float = 0.05) -> Assignment:
    """Assign a finding box to the tooth with maximum IoU when that IoU
    reaches tau_iou, otherwise to the tooth with the nearest box center.
    Ties break toward the lower FDI code."""
    if not teeth:
        raise GeometryError("empty teeth map")
    codes = sorted(teeth)
    best_code, best_iou = None, -1.0
    for code in codes:
        v = iou(finding, teeth[code])
        if v > best_iou + _EPS:
            best_code, best_iou = code, v
    if best_iou >= tau_iou:
        return Assignment(best_code, METHOD_IOU, best_iou)
    best_code, best_d = None, math.inf
    for code in codes:
        d = center_distance(finding, teeth[code])
        if d < best_d - _EPS:
            best_code, best_d = code, d
    return Assignment(best_code, METHOD_CENTER, best_d)
