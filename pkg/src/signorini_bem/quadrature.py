"""Triangle quadrature and regularised rules for singular panel pairs.

Barycentric triples ``(l0, l1, l2)`` address points of a triangle with
vertices ``(P0, P1, P2)`` as ``l0*P0 + l1*P1 + l2*P2``. Weights refer to a
reference triangle of area 1/2, so a physical weight is ``w * 2*area`` per
triangle.

Pair rules integrate ``f(x, y)`` over a product of two triangles. For the
singular classes the shared vertices must be the leading local vertices of
both triangles, in the same order (see :func:`classify_panels`). The
shared-edge and shared-vertex rules are the Sauter-Schwab transforms on the
triangle ``{0 <= r2 <= r1 <= 1}``; the coincident rule integrates in the
relative coordinate ``z = x - y`` over the six sectors of the hexagon
``T - T``, where the overlap ``T cap (T + z)`` is a scaled copy of ``T``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 30


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleRule:
    points: np.ndarray  # (n, 3) barycentric
    weights: np.ndarray  # (n,), sum 1/2
    degree: int

    def __len__(self):
        return len(self.weights)


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)], [w, w, w]


def _symmetric_rule(degree):
    if degree <= 1:
        return [(1 / 3, 1 / 3, 1 / 3)], [1.0]
    if degree == 2:
        return _orbit3(1 / 6, 1 / 3)
    if degree == 4:
        p1, w1 = _orbit3(0.445948490915964886, 0.223381589678011466)
        p2, w2 = _orbit3(0.091576213509770743, 0.109951743655321868)
        return p1 + p2, w1 + w2
    if degree == 5:
        s = math.sqrt(15.0)
        p1, w1 = _orbit3((6 + s) / 21, (155 + s) / 1200)
        p2, w2 = _orbit3((6 - s) / 21, (155 - s) / 1200)
        return [(1 / 3, 1 / 3, 1 / 3)] + p1 + p2, [9 / 40] + w1 + w2
    return None


def _collapsed_rule(m):
    # Stroud conical product: Gauss-Jacobi(1, 0) x Gauss-Legendre, exact to 2m-1
    tj, wj = roots_jacobi(m, 1.0, 0.0)
    tl, wl = roots_legendre(m)
    u = 0.5 * (1 + tj)
    v = 0.5 * (1 + tl)
    wu = 0.25 * wj
    wv = 0.5 * wl
    x = np.repeat(u, m)
    y = (1 - np.repeat(u, m)) * np.tile(v, m)
    w = np.repeat(wu, m) * np.tile(wv, m)
    return np.stack([1 - x - y, x, y], axis=1), w


@lru_cache(maxsize=None)
def gauss_triangle(degree: int) -> TriangleRule:
    """Positive-weight rule exact for polynomials of total degree ``degree``."""
    if int(degree) != degree or degree < 0 or degree > MAX_DEGREE:
        raise QuadratureError(f"unsupported triangle rule degree {degree} (0..{MAX_DEGREE})")
    degree = int(degree)
    sym = _symmetric_rule(degree)
    if sym is not None:
        pts, w = np.array(sym[0]), 0.5 * np.array(sym[1])
    else:
        pts, w = _collapsed_rule((degree + 2) // 2)
    pts.setflags(write=False)
    w.setflags(write=False)
    return TriangleRule(pts, w, degree)


class PairKind(enum.IntEnum):
    DISJOINT = 0
    SHARED_VERTEX = 1
    SHARED_EDGE = 2
    COINCIDENT = 3


@dataclass(frozen=True)
class PanelPairClass:
    """Relation of two triangles plus local-vertex permutations that move the
    shared vertices to the front of both triangles in matching order."""

    kind: PairKind
    perm_test: tuple
    perm_trial: tuple


def classify_panels(t1, t2) -> PanelPairClass:
    t1 = [int(i) for i in t1]
    t2 = [int(i) for i in t2]
    shared = [v for v in t1 if v in t2]
    kind = PairKind(len(shared))
    if kind == PairKind.DISJOINT:
        return PanelPairClass(kind, (0, 1, 2), (0, 1, 2))
    if kind == PairKind.COINCIDENT:
        return PanelPairClass(kind, (0, 1, 2), tuple(t2.index(v) for v in t1))
    if kind == PairKind.SHARED_EDGE:
        i0, i1 = t1.index(shared[0]), t1.index(shared[1])
        # keep the test triangle's cyclic order for the shared edge
        if (i1 - i0) % 3 != 1:
            i0, i1 = i1, i0
        a, b = t1[i0], t1[i1]
        p1 = (i0, i1, 3 - i0 - i1)
        j0, j1 = t2.index(a), t2.index(b)
        return PanelPairClass(kind, p1, (j0, j1, 3 - j0 - j1))
    i0 = t1.index(shared[0])
    j0 = t2.index(shared[0])
    return PanelPairClass(kind, (i0, (i0 + 1) % 3, (i0 + 2) % 3), (j0, (j0 + 1) % 3, (j0 + 2) % 3))


@dataclass(frozen=True)
class PairRule:
    x: np.ndarray  # (n, 3) barycentric points in the test triangle
    y: np.ndarray  # (n, 3) barycentric points in the trial triangle
    weights: np.ndarray  # reference weights, sum 1/4

    def __len__(self):
        return len(self.weights)


def _unit_gauss(order):
    t, w = roots_legendre(order)
    return 0.5 * (t + 1), 0.5 * w


def _cube4(order):
    s, w = _unit_gauss(order)
    grids = np.meshgrid(s, s, s, s, indexing="ij")
    wgrid = np.meshgrid(w, w, w, w, indexing="ij")
    pts = [g.ravel() for g in grids]
    return pts, np.prod([g.ravel() for g in wgrid], axis=0)


def _book_to_bary(r1, r2):
    return np.stack([1 - r1, r1 - r2, r2], axis=1)


def _shared_vertex(order):
    (xi, e1, e2, e3), w = _cube4(order)
    jac = xi**3 * e2
    a = (xi, xi * e1)
    b = (xi * e2, xi * e2 * e3)
    xs = [a, b]
    ys = [b, a]
    return _assemble_regions(xs, ys, [jac, jac], w)


def _shared_edge(order):
    (xi, e1, e2, e3), w = _cube4(order)
    regions = [
        ((xi, -xi * e1 * e2, xi * e1 * (1 - e2), xi * e1 * e3), xi**3 * e1**2),
        ((xi, -xi * e1 * e2 * e3, xi * e1 * e2 * (1 - e3), xi * e1), xi**3 * e1**2 * e2),
        ((xi * (1 - e1 * e2), xi * e1 * e2, xi * e1 * e2 * e3, xi * e1 * (1 - e2)), xi**3 * e1**2 * e2),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * e2 * e3, xi * e1, xi * e1 * e2 * (1 - e3)), xi**3 * e1**2 * e2),
        ((xi * (1 - e1 * e2 * e3), xi * e1 * e2 * e3, xi * e1 * e2, xi * e1 * (1 - e2 * e3)), xi**3 * e1**2 * e2),
    ]
    xs, ys, jacs = [], [], []
    for (w0, w1, w2, w3), jac in regions:
        xs.append((w0, w3))
        ys.append((w0 + w1, w2))
        jacs.append(jac)
    return _assemble_regions(xs, ys, jacs, w)


def _assemble_regions(xs, ys, jacs, w):
    x = np.concatenate([_book_to_bary(*p) for p in xs])
    y = np.concatenate([_book_to_bary(*p) for p in ys])
    weights = np.concatenate([w * j for j in jacs])
    return x, y, weights


# hexagon T - T for T = {0 <= r2 <= r1 <= 1}, counter-clockwise
_HEXAGON = np.array([(1, 0), (1, 1), (0, 1), (-1, 0), (-1, -1), (0, -1)], dtype=float)


def _coincident(order):
    xi, wxi = _unit_gauss(order)
    eta, weta = _unit_gauss(order)
    tri = _collapsed_rule(order)
    # barycentric (l0, l1, l2) of the standard triangle -> book coordinates
    # of T: vertices (0,0), (1,0), (1,1)
    r_hat = np.stack([tri[0][:, 1] + tri[0][:, 2], tri[0][:, 2]], axis=1)
    w_hat = tri[1]

    X, Y, W = [], [], []
    for k in range(6):
        p, q = _HEXAGON[k], _HEXAGON[(k + 1) % 6]
        det = abs(p[0] * q[1] - p[1] * q[0])
        XI, ETA, RH = np.meshgrid(np.arange(order), np.arange(order), np.arange(len(w_hat)), indexing="ij")
        XI, ETA, RH = XI.ravel(), ETA.ravel(), RH.ravel()
        s_xi = xi[XI]
        z = s_xi[:, None] * (p + eta[ETA][:, None] * (q - p))
        lo = np.maximum(0.0, z[:, 1])  # x2 >= lo
        hi = np.minimum(1.0, 1.0 + z[:, 0])  # x1 <= hi
        c = np.minimum(0.0, z[:, 1] - z[:, 0])  # x2 - x1 <= c
        size = hi - lo + c
        base = np.stack([lo - c, lo], axis=1)
        x = base + size[:, None] * r_hat[RH]
        y = x - z
        X.append(_book_to_bary(x[:, 0], x[:, 1]))
        Y.append(_book_to_bary(y[:, 0], y[:, 1]))
        W.append(det * s_xi * size**2 * wxi[XI] * weta[ETA] * w_hat[RH])
    return np.concatenate(X), np.concatenate(Y), np.concatenate(W)


def _disjoint(degree):
    rule = gauss_triangle(degree)
    n = len(rule)
    x = np.repeat(rule.points, n, axis=0)
    y = np.tile(rule.points, (n, 1))
    w = np.repeat(rule.weights, n) * np.tile(rule.weights, n)
    return x, y, w


@lru_cache(maxsize=None)
def singular_pair_rule(kind: PairKind, order: int) -> PairRule:
    """4D rule over a triangle pair of the given class.

    ``order`` is the Gauss-Legendre count per direction for the singular
    classes and the triangle-rule degree for DISJOINT.
    """
    kind = PairKind(kind)
    if int(order) != order or order < 1 or order > MAX_DEGREE:
        raise QuadratureError(f"unsupported order {order} for {kind.name}")
    order = int(order)
    builder = {
        PairKind.DISJOINT: _disjoint,
        PairKind.SHARED_VERTEX: _shared_vertex,
        PairKind.SHARED_EDGE: _shared_edge,
        PairKind.COINCIDENT: _coincident,
    }[kind]
    x, y, w = builder(order)
    for arr in (x, y, w):
        arr.setflags(write=False)
    return PairRule(x, y, w)


def map_points(corners: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Physical points of barycentric coordinates on one triangle (3, 3)."""
    return bary @ corners


def integrate_pair(rule: PairRule, corners_x, corners_y, f) -> float:
    """Apply a pair rule to ``f(x, y, bary_x, bary_y)`` on physical triangles
    whose shared vertices are already in leading position."""
    cx, cy = np.asarray(corners_x, float), np.asarray(corners_y, float)
    ax = 0.5 * np.linalg.norm(np.cross(cx[1] - cx[0], cx[2] - cx[0]))
    ay = 0.5 * np.linalg.norm(np.cross(cy[1] - cy[0], cy[2] - cy[0]))
    vals = f(rule.x @ cx, rule.y @ cy, rule.x, rule.y)
    return float(np.sum(rule.weights * vals) * 4 * ax * ay)
