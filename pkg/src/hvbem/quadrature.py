"""Reference-triangle quadrature: Gauss rules, Duffy transforms and the
graded composite rules used for nearly-singular surface integrals.

All rules live on the reference triangle {u >= 0, v >= 0, u + v <= 1};
weights integrate the constant 1 to the reference area 1/2.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Rule",
    "PairClass",
    "QuadConfig",
    "classify_pair",
    "regular_rule",
    "duffy_rule",
    "closest_point",
    "subdivide_at",
    "near_singular_rule",
]

REFERENCE_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

REGULAR = "regular"
NEAR_SINGULAR = "near_singular"
SINGULAR = "singular"


class QuadratureError(ValueError):
    """Unsupported rule request."""


@dataclass(frozen=True)
class Rule:
    """Quadrature nodes (m, 2) in reference coordinates plus weights (m,)."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class PairClass:
    """Classification of a (collocation point, triangle) pair.

    kind is one of "regular", "near_singular", "singular"; corner is the
    local corner index 0..2 of the collocation point for singular pairs.
    """

    kind: str
    corner: int | None = None

    @property
    def is_singular(self) -> bool:
        return self.kind == SINGULAR

    @property
    def is_near(self) -> bool:
        return self.kind == NEAR_SINGULAR

    @property
    def is_regular(self) -> bool:
        return self.kind == REGULAR


@dataclass(frozen=True)
class QuadConfig:
    """Quadrature parameters; defaults tuned for the analytic benchmarks."""

    regular_order: int = 6
    duffy_points: int = 6
    near_duffy_points: int = 8
    near_outer_order: int = 8
    eta: float = 1.2
    bisect_depth: int = 3
    bisect_trigger: float = 0.3


# --------------------------------------------------------------------------
# Symmetric Gauss rules (Dunavant tabulation).  Each group is either
# ("c",) centroid, ("s", a) the three permutations of (1-2a, a, a), or
# ("r", a, b) the six permutations of (a, b, 1-a-b).  Weights are given in
# the sum-to-one normalization and halved on construction.
# --------------------------------------------------------------------------

_DUNAVANT = {
    2: [
        ("s", 1.0 / 6.0, 1.0 / 3.0),
    ],
    4: [
        ("s", 0.445948490915965, 0.223381589678011),
        ("s", 0.091576213509771, 0.109951743655322),
    ],
    6: [
        ("s", 0.249286745170910, 0.116786275726379),
        ("s", 0.063089014491502, 0.050844906370207),
        ("r", 0.310352451033785, 0.053145049844816, 0.082851075618374),
    ],
    8: [
        ("c", 0.14431560767771356),
        ("s", 0.45929258829267405, 0.0950916342673329),
        ("s", 0.1705693077517035, 0.10321737053473093),
        ("s", 0.05054722831703301, 0.032458497623204935),
        ("r", 0.26311282963480714, 0.00839477740988042, 0.027230314174413347),
    ],
}


def _expand_group(group) -> tuple[list[tuple[float, float]], float]:
    if group[0] == "c":
        return [(1.0 / 3.0, 1.0 / 3.0)], group[1]
    if group[0] == "s":
        a, w = group[1], group[2]
        b = 1.0 - 2.0 * a
        bary = [(b, a, a), (a, b, a), (a, a, b)]
    else:
        a, b, w = group[1], group[2], group[3]
        c = 1.0 - a - b
        bary = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    # barycentric (l0, l1, l2) -> (u, v) = (l1, l2)
    return [(l1, l2) for (_, l1, l2) in bary], w


def regular_rule(order: int) -> Rule:
    """Symmetric Gauss rule on the reference triangle, exact to `order`."""
    if order not in _DUNAVANT:
        raise QuadratureError(
            f"unsupported quadrature order {order}; choose from {sorted(_DUNAVANT)}"
        )
    nodes, weights = [], []
    for group in _DUNAVANT[order]:
        pts, w = _expand_group(group)
        nodes.extend(pts)
        weights.extend([0.5 * w] * len(pts))
    return Rule(np.array(nodes), np.array(weights))


def gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _duffy_square(n1d: int) -> Rule:
    """Single collapsed tensor Gauss square: singularity at corner 0."""
    s, ws = gauss_1d(n1d)
    t, wt = gauss_1d(n1d)
    S, T = np.meshgrid(s, t, indexing="ij")
    WS, WT = np.meshgrid(ws, wt, indexing="ij")
    u = (S * (1.0 - T)).ravel()
    v = (S * T).ravel()
    w = (WS * WT * S).ravel()
    return Rule(np.column_stack([u, v]), w)


def duffy_rule(corner: int, n1d: int) -> Rule:
    """Corner-anchored singular rule: the triangle is split at the midpoint
    of the edge opposite `corner` and a collapsed tensor Gauss square is
    mapped onto each half.  The collapse Jacobian is proportional to the
    distance from the corner, cancelling a 1/r singularity there.

    The split halves the corner angle seen by each square, which is what
    buys the last few digits on sliver-free triangles."""
    if n1d < 2:
        raise QuadratureError("duffy_rule needs n1d >= 2")
    if corner not in (0, 1, 2):
        raise QuadratureError("corner must be 0, 1 or 2")
    base = _duffy_square(n1d)
    mid = np.array([0.5, 0.5])
    nodes, weights = [], []
    for half in (
        np.array([[0.0, 0.0], [1.0, 0.0], mid]),
        np.array([[0.0, 0.0], mid, [0.0, 1.0]]),
    ):
        n, w = _map_rule_to(base, half)
        nodes.append(n)
        weights.append(w)
    u = np.concatenate([n[:, 0] for n in nodes])
    v = np.concatenate([n[:, 1] for n in nodes])
    w = np.concatenate(weights)
    if corner != 0:
        # rotate barycentric coordinates so the singularity lands on `corner`
        l0 = 1.0 - u - v
        if corner == 1:
            l0, u, v = v, l0, u
        else:
            l0, u, v = u, v, l0
    return Rule(np.column_stack([u, v]), w)


# --------------------------------------------------------------------------
# Pair classification
# --------------------------------------------------------------------------


def classify_pair(point, vertex_id, tri, eta: float = 1.2) -> PairClass:
    """Classify a (collocation point, triangle) pair.

    `vertex_id` is the global mesh id of the collocation point, or None for
    off-mesh evaluation points.  `tri` must expose corner_ids, circumcenter
    and circumradius.
    """
    if vertex_id is not None:
        for c in range(3):
            if tri.corner_ids[c] == vertex_id:
                return PairClass(SINGULAR, corner=c)
    d = np.linalg.norm(np.asarray(point, dtype=float) - tri.circumcenter)
    if d > eta * tri.circumradius:
        return PairClass(REGULAR)
    return PairClass(NEAR_SINGULAR)


# --------------------------------------------------------------------------
# Closest point on the flat corner triangle
# --------------------------------------------------------------------------


def closest_point(x, tri) -> tuple[float, float]:
    """Reference coordinates (u*, v*) of the point of the flat corner
    triangle closest to x.  Projection plus edge/corner clamping."""
    corners = np.asarray(tri.nodes[:3], dtype=float)
    return closest_point_flat(np.asarray(x, dtype=float), corners)


def closest_point_flat(x: np.ndarray, corners: np.ndarray) -> tuple[float, float]:
    a, b, c = corners
    ab = b - a
    ac = c - a
    ap = x - a

    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return (0.0, 0.0)

    bp = x - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return (1.0, 0.0)

    cp = x - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return (0.0, 1.0)

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        return (t, 0.0)

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        return (0.0, t)

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return (1.0 - t, t)

    denom = 1.0 / (va + vb + vc)
    u = vb * denom
    v = vc * denom
    return (u, v)


# --------------------------------------------------------------------------
# Subdivision at the closest point
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SubTriangle:
    """Reference-space subtriangle; corners[anchor] is the closest point."""

    corners: np.ndarray  # (3, 2)
    anchor: int


_CORNER_EPS = 1e-9


def subdivide_at(uv_star: tuple[float, float]) -> list[SubTriangle]:
    """Split the reference triangle so (u*, v*) becomes a corner of every
    piece: 1 piece at a corner, 2 on an edge interior, 3 in the interior."""
    u, v = float(uv_star[0]), float(uv_star[1])
    w = 1.0 - u - v
    bary = np.array([w, u, v])
    p = np.array([u, v])
    c0, c1, c2 = REFERENCE_CORNERS

    near_one = np.nonzero(bary > 1.0 - _CORNER_EPS)[0]
    if near_one.size:
        corner = int(near_one[0])
        return [SubTriangle(REFERENCE_CORNERS.copy(), anchor=corner)]

    zero = np.nonzero(bary < _CORNER_EPS)[0]
    if zero.size:
        # on an edge interior: the edge opposite to the vanishing barycentric
        if zero[0] == 0:  # edge c1-c2
            return [
                SubTriangle(np.array([p, c2, c0]), anchor=0),
                SubTriangle(np.array([p, c0, c1]), anchor=0),
            ]
        if zero[0] == 1:  # edge c0-c2 (u = 0)
            return [
                SubTriangle(np.array([p, c0, c1]), anchor=0),
                SubTriangle(np.array([p, c1, c2]), anchor=0),
            ]
        return [  # edge c0-c1 (v = 0)
            SubTriangle(np.array([p, c1, c2]), anchor=0),
            SubTriangle(np.array([p, c2, c0]), anchor=0),
        ]

    return [
        SubTriangle(np.array([p, c0, c1]), anchor=0),
        SubTriangle(np.array([p, c1, c2]), anchor=0),
        SubTriangle(np.array([p, c2, c0]), anchor=0),
    ]


# --------------------------------------------------------------------------
# Graded composite rules for near-singular pairs
# --------------------------------------------------------------------------

_composite_cache: dict[tuple[int, int, int], Rule] = {}
_cache_lock = threading.Lock()


def _quadrisect(cell: np.ndarray) -> list[np.ndarray]:
    m01 = 0.5 * (cell[0] + cell[1])
    m12 = 0.5 * (cell[1] + cell[2])
    m20 = 0.5 * (cell[2] + cell[0])
    return [
        np.array([cell[0], m01, m20]),
        np.array([m01, cell[1], m12]),
        np.array([m20, m12, cell[2]]),
        np.array([m01, m12, m20]),
    ]


def _graded_rule(depth: int, n1d: int, outer_order: int) -> Rule:
    """Composite rule on the reference triangle graded toward corner 0:
    `depth` halvings toward the corner, quadrisected Gauss cells on each
    annulus and a Duffy rule on the innermost cell.

    Without grading (depth 0) this is just the corner-anchored Duffy rule;
    grading is what keeps the annulus cells small compared to their
    distance from the nearby evaluation point."""
    if depth == 0:
        return duffy_rule(0, n1d)
    key = (depth, n1d, outer_order)
    with _cache_lock:
        cached = _composite_cache.get(key)
    if cached is not None:
        return cached

    nodes = []
    weights = []
    outer = regular_rule(outer_order)
    for level in range(depth):
        s = 0.5 ** level
        h = 0.5 * s
        # outer L-shaped annulus = two triangles, quadrisected once
        for cell in (
            np.array([[h, 0.0], [s, 0.0], [0.0, s]]),
            np.array([[h, 0.0], [0.0, s], [0.0, h]]),
        ):
            for child in _quadrisect(cell):
                n, w = _map_rule_to(outer, child)
                nodes.append(n)
                weights.append(w)
    inner_scale = 0.5 ** depth
    duffy = duffy_rule(0, n1d)
    nodes.append(duffy.nodes * inner_scale)
    weights.append(duffy.weights * inner_scale ** 2)

    rule = Rule(np.vstack(nodes), np.concatenate(weights))
    with _cache_lock:
        _composite_cache[key] = rule
    return rule


def _map_rule_to(rule: Rule, corners: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Affinely map a reference rule onto the triangle given by `corners`
    (corner 0 of the reference lands on corners[0])."""
    a = corners[0]
    e1 = corners[1] - a
    e2 = corners[2] - a
    nodes = a + np.outer(rule.nodes[:, 0], e1) + np.outer(rule.nodes[:, 1], e2)
    det = abs(e1[0] * e2[1] - e1[1] * e2[0])
    # base rule weights sum to 1/2 = reference area, so scale by det alone
    return nodes, rule.weights * (2.0 * det) * 0.5


def near_singular_rule(x, tri, config: QuadConfig | None = None) -> Rule:
    """Composite rule in the triangle's own reference coordinates for a
    collocation point close to (or on) the triangle.

    Subdivides at the closest point of the flat corner triangle and anchors
    a Duffy rule there.  When the point sits closer than bisect_trigger
    times the circumradius, each subtriangle is first split at the midpoint
    of the edge opposite the anchor (keeping the anchor angles acute) and
    then graded toward the anchor with bisect_depth halvings, Duffy on the
    innermost cell.
    """
    cfg = config or QuadConfig()
    x = np.asarray(x, dtype=float)
    corners = np.asarray(tri.nodes[:3], dtype=float)
    u_star, v_star = closest_point_flat(x, corners)
    nearest = (
        corners[0]
        + u_star * (corners[1] - corners[0])
        + v_star * (corners[2] - corners[0])
    )
    dist = np.linalg.norm(x - nearest)
    depth = cfg.bisect_depth if dist < cfg.bisect_trigger * tri.circumradius else 0
    base = _graded_rule(depth, cfg.near_duffy_points, cfg.near_outer_order)

    nodes = []
    weights = []
    for sub in subdivide_at((u_star, v_star)):
        # roll the corners so the anchor is local corner 0
        c = np.roll(sub.corners, -sub.anchor, axis=0)
        if depth == 0:
            pieces = [c]
        else:
            mid = 0.5 * (c[1] + c[2])
            pieces = [
                np.array([c[0], c[1], mid]),
                np.array([c[0], mid, c[2]]),
            ]
        for piece in pieces:
            n, w = _map_rule_to(base, piece)
            nodes.append(n)
            weights.append(w)
    return Rule(np.vstack(nodes), np.concatenate(weights))
