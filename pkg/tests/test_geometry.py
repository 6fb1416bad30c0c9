import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylegallery.geometry import Circle, min_enclosing_circle


def brute_force_circle(pts: np.ndarray) -> Circle:
    """O(n^4) reference: the optimum is determined by a pair (diameter) or a
    triple (circumcircle); enumerate all and keep the smallest that covers."""
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    if n == 1:
        return Circle(float(pts[0, 0]), float(pts[0, 1]), 0.0)

    best: Circle | None = None

    def covers(cx, cy, r):
        return all(math.hypot(x - cx, y - cy) <= r + 1e-12 for x, y in pts)

    for i, j in itertools.combinations(range(n), 2):
        cx = (pts[i, 0] + pts[j, 0]) / 2.0
        cy = (pts[i, 1] + pts[j, 1]) / 2.0
        r = max(math.hypot(cx - x, cy - y) for x, y in (pts[i], pts[j]))
        if covers(cx, cy, r) and (best is None or r < best.r):
            best = Circle(cx, cy, r)

    for i, j, k in itertools.combinations(range(n), 3):
        circ = _circumcircle(pts[i], pts[j], pts[k])
        if circ is None:
            continue
        if covers(*circ) and (best is None or circ[2] < best.r):
            best = Circle(*circ)

    assert best is not None
    return best


def _circumcircle(a, b, c):
    d = (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1])) * 2.0
    if d == 0.0:
        return None
    ux = (
        (a[0] ** 2 + a[1] ** 2) * (b[1] - c[1])
        + (b[0] ** 2 + b[1] ** 2) * (c[1] - a[1])
        + (c[0] ** 2 + c[1] ** 2) * (a[1] - b[1])
    ) / d
    uy = (
        (a[0] ** 2 + a[1] ** 2) * (c[0] - b[0])
        + (b[0] ** 2 + b[1] ** 2) * (a[0] - c[0])
        + (c[0] ** 2 + c[1] ** 2) * (b[0] - a[0])
    ) / d
    r = max(math.hypot(ux - p[0], uy - p[1]) for p in (a, b, c))
    return (ux, uy, r)


def test_single_point_radius_zero():
    c = min_enclosing_circle(np.array([[0.25, 0.75]]))
    assert c.as_tuple() == (0.25, 0.75, 0.0)


def test_two_points_diameter():
    c = min_enclosing_circle(np.array([[0.0, 0.5], [1.0, 0.5]]))
    assert c.cx == pytest.approx(0.5, abs=1e-12)
    assert c.cy == pytest.approx(0.5, abs=1e-12)
    assert c.r == pytest.approx(0.5, abs=1e-12)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        min_enclosing_circle(np.empty((0, 2)))


def test_duplicate_points():
    pts = np.array([[1.0, 1.0]] * 5 + [[2.0, 1.0]])
    c = min_enclosing_circle(pts)
    assert c.r == pytest.approx(0.5, abs=1e-12)


def test_collinear_points():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    c = min_enclosing_circle(pts)
    assert c.r == pytest.approx(math.hypot(1.5, 1.5), rel=1e-12)


def test_matches_brute_force_random_30_points():
    rng = np.random.default_rng(7)
    pts = rng.random((30, 2))
    exact = min_enclosing_circle(pts)
    oracle = brute_force_circle(pts)
    assert exact.cx == pytest.approx(oracle.cx, abs=1e-9)
    assert exact.cy == pytest.approx(oracle.cy, abs=1e-9)
    assert exact.r == pytest.approx(oracle.r, abs=1e-9)


def test_deterministic_across_calls():
    rng = np.random.default_rng(11)
    pts = rng.random((25, 2))
    assert min_enclosing_circle(pts) == min_enclosing_circle(pts.copy())


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(-10, 10, allow_nan=False, allow_infinity=False),
            st.floats(-10, 10, allow_nan=False, allow_infinity=False),
        ),
        min_size=1,
        max_size=12,
    )
)
def test_property_all_points_enclosed_and_minimal(coords):
    pts = np.array(coords, dtype=float)
    circle = min_enclosing_circle(pts)
    for x, y in pts:
        assert math.hypot(x - circle.cx, y - circle.cy) <= circle.r + 1e-6
    oracle = brute_force_circle(pts)
    assert circle.r == pytest.approx(oracle.r, abs=1e-7)
