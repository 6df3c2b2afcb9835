import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvbem.quadrature import (
    PairClass,
    QuadConfig,
    QuadratureError,
    classify_pair,
    closest_point,
    closest_point_flat,
    duffy_rule,
    near_singular_rule,
    regular_rule,
    subdivide_at,
)

from conftest import make_flat_tri
from oracles import (
    adaptive_triangle_integral,
    corner_singular_integral,
    grid_closest_point,
)

UNIT_RIGHT = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def integrate_over_flat(rule, corners, f):
    corners = np.asarray(corners, dtype=float)
    pts = (
        corners[0]
        + np.outer(rule.nodes[:, 0], corners[1] - corners[0])
        + np.outer(rule.nodes[:, 1], corners[2] - corners[0])
    )
    det = np.linalg.norm(np.cross(corners[1] - corners[0], corners[2] - corners[0]))
    return float(np.sum(rule.weights * 2.0 * det * 0.5 * f(pts)))


# --------------------------------------------------------------------------
# regular rules
# --------------------------------------------------------------------------


def test_order2_weights_sum_to_reference_area():
    rule = regular_rule(2)
    assert abs(rule.weights.sum() - 0.5) < 1e-14


def test_order4_integrates_u():
    rule = regular_rule(4)
    got = float(np.sum(rule.weights * rule.nodes[:, 0]))
    assert abs(got - 1.0 / 6.0) < 1e-15


def test_order8_integrates_u2v2():
    # analytic monomial integral: p! q! / (p+q+2)! = 2!2!/6! = 1/180
    rule = regular_rule(8)
    got = float(np.sum(rule.weights * rule.nodes[:, 0] ** 2 * rule.nodes[:, 1] ** 2))
    assert abs(got - 1.0 / 180.0) < 1e-14


@pytest.mark.parametrize("order", [2, 4, 6, 8])
def test_rules_exact_for_full_degree(order):
    rule = regular_rule(order)
    for p in range(order + 1):
        for q in range(order + 1 - p):
            exact = math.factorial(p) * math.factorial(q) / math.factorial(p + q + 2)
            got = float(
                np.sum(rule.weights * rule.nodes[:, 0] ** p * rule.nodes[:, 1] ** q)
            )
            assert abs(got - exact) < 5e-15, (order, p, q)


@pytest.mark.parametrize("order", [2, 4, 6, 8])
def test_rule_nodes_inside(order):
    rule = regular_rule(order)
    assert np.all(rule.nodes >= -1e-14)
    assert np.all(rule.nodes.sum(axis=1) <= 1.0 + 1e-14)


def test_unsupported_order():
    with pytest.raises(QuadratureError):
        regular_rule(5)


@pytest.mark.parametrize("order", [2, 4, 6, 8])
def test_constant_integration_gives_exact_area(order):
    corners = np.array([[0.2, -0.1, 0.4], [1.4, 0.3, -0.2], [0.1, 1.2, 0.8]])
    area = 0.5 * np.linalg.norm(
        np.cross(corners[1] - corners[0], corners[2] - corners[0])
    )
    got = integrate_over_flat(regular_rule(order), corners, lambda p: np.ones(len(p)))
    assert abs(got - area) / area < 1e-12


# --------------------------------------------------------------------------
# Duffy rules
# --------------------------------------------------------------------------


def test_duffy_weights_sum():
    for corner in (0, 1, 2):
        rule = duffy_rule(corner, 8)
        assert abs(rule.weights.sum() - 0.5) < 1e-14


# frozen from oracles.corner_singular_integral(UNIT_RIGHT, 0), which agrees
# with the closed form sqrt(2) asinh(1) to 7e-16
CORNER_SINGULAR_REF = 1.246450480280461


def test_corner_singular_reference_oracle():
    ref = corner_singular_integral(UNIT_RIGHT, 0, tol=1e-9)
    closed_form = math.sqrt(2.0) * math.log(1.0 + math.sqrt(2.0))
    assert abs(ref - CORNER_SINGULAR_REF) < 2e-9
    assert abs(ref - closed_form) < 2e-9


def test_duffy_corner_singular_integral_matches_reference():
    rule = duffy_rule(0, 8)
    got = integrate_over_flat(
        rule, UNIT_RIGHT, lambda p: 1.0 / np.linalg.norm(p, axis=1)
    )
    assert abs(got - CORNER_SINGULAR_REF) < 1e-8


def test_duffy_corner_relabeling_symmetry():
    a = np.array([0.2, 0.1, 0.0])
    b = np.array([1.3, 0.2, 0.0])
    c = np.array([0.4, 1.1, 0.0])
    f = lambda p: 1.0 / np.linalg.norm(p - a[None, :], axis=1)
    v0 = integrate_over_flat(duffy_rule(0, 8), np.array([a, b, c]), f)
    v2 = integrate_over_flat(duffy_rule(2, 8), np.array([b, c, a]), f)
    assert abs(v0 - v2) < 1e-12


def test_duffy_requires_two_points():
    with pytest.raises(QuadratureError):
        duffy_rule(0, 1)


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------


def test_classify_corner_match_is_singular():
    tri = make_flat_tri(UNIT_RIGHT)
    got = classify_pair(np.array([1.0, 0.0, 0.0]), 1, tri)
    assert got == PairClass("singular", corner=1)


def test_classify_far_point_is_regular():
    tri = make_flat_tri(UNIT_RIGHT)
    # D = 2 R along the plane, eta = 1.2
    center = tri.circumcenter
    x = center + np.array([0.0, 0.0, 2.0 * tri.circumradius])
    assert classify_pair(x, None, tri, eta=1.2).is_regular


def test_classify_close_point_is_near_singular():
    tri = make_flat_tri(UNIT_RIGHT)
    x = tri.circumcenter + np.array([0.0, 0.0, 1.0 * tri.circumradius])
    assert classify_pair(x, 999, tri, eta=1.2).is_near


@settings(max_examples=200, deadline=None)
@given(
    scale=st.floats(min_value=1e-3, max_value=1e3),
    height=st.floats(min_value=0.0, max_value=3.0),
    lateral=st.floats(min_value=-2.0, max_value=2.0),
)
def test_classification_is_scale_invariant(scale, height, lateral):
    tri1 = make_flat_tri(UNIT_RIGHT)
    tri2 = make_flat_tri(UNIT_RIGHT * scale)
    x1 = np.array([lateral, 0.3, height])
    got1 = classify_pair(x1, None, tri1)
    got2 = classify_pair(x1 * scale, None, tri2)
    assert got1 == got2


# --------------------------------------------------------------------------
# closest point
# --------------------------------------------------------------------------


def test_closest_point_above_barycenter():
    tri = make_flat_tri(UNIT_RIGHT)
    u, v = closest_point(np.array([1 / 3, 1 / 3, 0.7]), tri)
    assert abs(u - 1 / 3) < 1e-12 and abs(v - 1 / 3) < 1e-12


def test_closest_point_clamps_to_corner():
    tri = make_flat_tri(UNIT_RIGHT)
    u, v = closest_point(np.array([-1.0, -2.0, 0.5]), tri)
    assert (u, v) == (0.0, 0.0)


def test_closest_point_matches_grid_search():
    rng = np.random.default_rng(7)
    corners = np.array([[0.1, 0.0, 0.2], [1.2, 0.1, -0.3], [0.3, 1.4, 0.5]])
    for _ in range(25):
        x = rng.uniform(-1.5, 2.0, size=3)
        u, v = closest_point_flat(x, corners)
        gu, gv = grid_closest_point(x, corners)
        p = corners[0] + u * (corners[1] - corners[0]) + v * (corners[2] - corners[0])
        g = corners[0] + gu * (corners[1] - corners[0]) + gv * (corners[2] - corners[0])
        assert np.linalg.norm(x - p) <= np.linalg.norm(x - g) + 1e-6


# --------------------------------------------------------------------------
# subdivision
# --------------------------------------------------------------------------


def test_subdivide_at_corner_is_identity():
    subs = subdivide_at((0.0, 0.0))
    assert len(subs) == 1
    assert subs[0].anchor == 0
    assert np.allclose(subs[0].corners, [[0, 0], [1, 0], [0, 1]])


def test_subdivide_on_edge_gives_two():
    subs = subdivide_at((0.5, 0.0))
    assert len(subs) == 2
    for sub in subs:
        np.testing.assert_allclose(sub.corners[sub.anchor], [0.5, 0.0])


def test_subdivide_interior_gives_three_partition():
    subs = subdivide_at((1 / 3, 1 / 3))
    assert len(subs) == 3
    total = 0.0
    for sub in subs:
        e1 = sub.corners[1] - sub.corners[0]
        e2 = sub.corners[2] - sub.corners[0]
        total += 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    assert abs(total - 0.5) < 1e-14


@settings(max_examples=100, deadline=None)
@given(
    u=st.floats(min_value=0.0, max_value=1.0),
    v=st.floats(min_value=0.0, max_value=1.0),
)
def test_subdivide_always_partitions(u, v):
    if u + v > 1.0:
        u, v = 1.0 - u, 1.0 - v
    subs = subdivide_at((u, v))
    assert 1 <= len(subs) <= 3
    total = sum(
        0.5
        * abs(
            (s.corners[1] - s.corners[0])[0] * (s.corners[2] - s.corners[0])[1]
            - (s.corners[1] - s.corners[0])[1] * (s.corners[2] - s.corners[0])[0]
        )
        for s in subs
    )
    assert abs(total - 0.5) < 1e-12


# --------------------------------------------------------------------------
# near-singular composite
# --------------------------------------------------------------------------

# references frozen from oracles.adaptive_triangle_integral at tol 1e-11
NEAR_REFS = {
    0.1: 2.006576943826,
    0.3: 1.437278726277,
    0.6: 0.959761111114,
    1.0: 0.645094888525,
}


def _near_value(x, tri):
    rule = near_singular_rule(x, tri, QuadConfig())
    return integrate_over_flat(
        rule, tri.nodes[:3], lambda p: 1.0 / np.linalg.norm(p - x[None, :], axis=1)
    )


def test_near_composite_close_above_barycenter():
    tri = make_flat_tri(UNIT_RIGHT)
    x = np.array([1 / 3, 1 / 3, 0.05])
    ref = adaptive_triangle_integral(
        lambda p: 1.0 / np.linalg.norm(p - x[None, :], axis=1), UNIT_RIGHT, tol=1e-11
    )
    got = _near_value(x, tri)
    assert abs(got - ref) / ref < 1e-6


def test_near_composite_far_consistency_with_regular_rule():
    tri = make_flat_tri(UNIT_RIGHT)
    x = np.array([3.0, 2.0, 2.5])
    f = lambda p: 1.0 / np.linalg.norm(p - x[None, :], axis=1)
    regular = integrate_over_flat(regular_rule(6), UNIT_RIGHT, f)
    composite = _near_value(x, tri)
    assert abs(composite - regular) / abs(regular) < 1e-9


def test_near_composite_weights_partition_area():
    tri = make_flat_tri(UNIT_RIGHT)
    for x in (np.array([1 / 3, 1 / 3, 0.02]), np.array([0.9, 0.4, 0.5])):
        rule = near_singular_rule(x, tri, QuadConfig())
        assert abs(rule.weights.sum() - 0.5) < 1e-13


@pytest.mark.parametrize("frac", [0.1, 0.3, 0.6, 1.0, 1.2])
def test_near_composite_graceful_range(frac):
    tri = make_flat_tri(UNIT_RIGHT)
    x = np.array([1 / 3, 1 / 3, frac * tri.circumradius])
    ref = NEAR_REFS.get(frac)
    if ref is None:
        ref = adaptive_triangle_integral(
            lambda p: 1.0 / np.linalg.norm(p - x[None, :], axis=1),
            UNIT_RIGHT,
            tol=1e-11,
        )
    got = _near_value(x, tri)
    assert abs(got - ref) / ref <= 1e-5
