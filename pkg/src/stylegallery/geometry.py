"""Exact minimum enclosing circle of a 2-D point set.

Incremental Welzl-type construction: points are inserted one at a time and
the circle is rebuilt whenever the new point falls outside, constraining the
rebuild to keep that point on the boundary. Expected linear time after a
deterministic shuffle (seeded from the point bytes, so results are
reproducible across processes).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

# Containment slack: covers accumulated rounding in circumcenter arithmetic
# without admitting circles that are measurably too small.
_EPS = 1.0 + 1e-12


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def contains(self, x: float, y: float, slack: float = 0.0) -> bool:
        return math.hypot(x - self.cx, y - self.cy) <= self.r * _EPS + slack

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.cx, self.cy, self.r)


def min_enclosing_circle(points: np.ndarray) -> Circle:
    """Smallest circle containing every row of ``points`` (shape (n, 2)).

    Raises ValueError on an empty input. A single point yields radius 0.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (n, 2) point array, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise ValueError("cannot enclose an empty point set")

    order = _deterministic_order(pts)
    shuffled = [(float(x), float(y)) for x, y in pts[order]]

    circle: Circle | None = None
    for i, p in enumerate(shuffled):
        if circle is None or not circle.contains(*p):
            circle = _circle_with_boundary_point(shuffled[: i + 1], p)
    assert circle is not None
    return circle


def _deterministic_order(pts: np.ndarray) -> np.ndarray:
    digest = hashlib.sha256(np.ascontiguousarray(pts).tobytes()).digest()
    seed = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(seed).permutation(len(pts))


def _circle_with_boundary_point(pts, p) -> Circle:
    circle = Circle(p[0], p[1], 0.0)
    for i, q in enumerate(pts):
        if not circle.contains(*q):
            if circle.r == 0.0:
                circle = _diameter_circle(p, q)
            else:
                circle = _circle_with_boundary_pair(pts[: i + 1], p, q)
    return circle


def _circle_with_boundary_pair(pts, p, q) -> Circle:
    base = _diameter_circle(p, q)
    left: Circle | None = None
    right: Circle | None = None

    for s in pts:
        if base.contains(*s):
            continue
        side = _cross(p, q, s)
        cand = _circumcircle(p, q, s)
        if cand is None:
            continue
        center_side = _cross(p, q, (cand.cx, cand.cy))
        if side > 0.0 and (left is None or center_side > _cross(p, q, (left.cx, left.cy))):
            left = cand
        elif side < 0.0 and (right is None or center_side < _cross(p, q, (right.cx, right.cy))):
            right = cand

    if left is None:
        return base if right is None else right
    if right is None:
        return left
    return left if left.r <= right.r else right


def _diameter_circle(a, b) -> Circle:
    cx = (a[0] + b[0]) / 2.0
    cy = (a[1] + b[1]) / 2.0
    r = max(math.hypot(cx - a[0], cy - a[1]), math.hypot(cx - b[0], cy - b[1]))
    return Circle(cx, cy, r)


def _circumcircle(a, b, c) -> Circle | None:
    # Translate toward the bounding-box midpoint before solving; keeps the
    # determinant well-conditioned for nearly collinear triples.
    ox = (min(a[0], b[0], c[0]) + max(a[0], b[0], c[0])) / 2.0
    oy = (min(a[1], b[1], c[1]) + max(a[1], b[1], c[1])) / 2.0
    ax, ay = a[0] - ox, a[1] - oy
    bx, by = b[0] - ox, b[1] - oy
    cx, cy = c[0] - ox, c[1] - oy
    d = (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by)) * 2.0
    if d == 0.0:
        return None
    x = ox + (
        (ax * ax + ay * ay) * (by - cy)
        + (bx * bx + by * by) * (cy - ay)
        + (cx * cx + cy * cy) * (ay - by)
    ) / d
    y = oy + (
        (ax * ax + ay * ay) * (cx - bx)
        + (bx * bx + by * by) * (ax - cx)
        + (cx * cx + cy * cy) * (bx - ax)
    ) / d
    r = max(
        math.hypot(x - a[0], y - a[1]),
        math.hypot(x - b[0], y - b[1]),
        math.hypot(x - c[0], y - c[1]),
    )
    return Circle(x, y, r)


def _cross(p, q, s) -> float:
    return (q[0] - p[0]) * (s[1] - p[1]) - (q[1] - p[1]) * (s[0] - p[0])
