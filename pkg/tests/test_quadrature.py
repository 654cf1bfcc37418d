import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signorini_bem.operators import QuadratureOrders
from signorini_bem.quadrature import (
    PairKind,
    QuadratureError,
    classify_panels,
    gauss_triangle,
    integrate_pair,
    singular_pair_rule,
)
from oracles import monomial_moment

# independent reference values: closed-form inner integral + adaptive outer
COINCIDENT_SL = 0.07982144690424871
EDGE_SL = 0.039251040541182794
VERTEX_SL = 0.018915988854506585

UNIT = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
# shared vertices first and in matching order
EDGE_TRIAL = np.array([[0.0, 0, 0], [1, 0, 0], [0, 0, 1]])
VERTEX_TRIAL = np.array([[0.0, 0, 0], [0, -1, 1], [0, -1, 0]])


def single_layer(x, y, bx, by):
    return 1.0 / (4 * math.pi * np.linalg.norm(x - y, axis=1))


def pair_value(kind, order, cx, cy):
    return integrate_pair(singular_pair_rule(kind, order), cx, cy, single_layer)


@pytest.mark.parametrize("degree", range(0, 16))
def test_rule_weights(degree):
    rule = gauss_triangle(degree)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-14)
    assert np.allclose(rule.points.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(rule.points >= 0)


@pytest.mark.parametrize("degree", [1, 2, 4, 5, 6, 8, 10, 12])
def test_rule_exactness(degree):
    rule = gauss_triangle(degree)
    x, y = rule.points[:, 1], rule.points[:, 2]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            assert rule.weights @ (x**a * y**b) == pytest.approx(monomial_moment(a, b), abs=1e-14)


def test_named_moments():
    assert gauss_triangle(0).weights.sum() == 0.5
    r1 = gauss_triangle(1)
    assert r1.weights @ r1.points[:, 1] == pytest.approx(1 / 6, abs=1e-14)
    r4 = gauss_triangle(4)
    assert r4.weights @ (r4.points[:, 1] ** 2 * r4.points[:, 2] ** 2) == pytest.approx(1 / 180, abs=1e-14)


@pytest.mark.parametrize("degree", [-1, 2.5, 1000])
def test_unsupported_degree(degree):
    with pytest.raises(QuadratureError):
        gauss_triangle(degree)


def test_classification_examples():
    assert classify_panels((0, 1, 2), (0, 1, 2)).kind == PairKind.COINCIDENT
    assert classify_panels((0, 1, 2), (1, 2, 3)).kind == PairKind.SHARED_EDGE
    assert classify_panels((0, 1, 2), (3, 4, 5)).kind == PairKind.DISJOINT
    assert classify_panels((0, 1, 2), (5, 2, 7)).kind == PairKind.SHARED_VERTEX


@settings(max_examples=200)
@given(st.lists(st.integers(0, 6), min_size=3, max_size=3, unique=True),
       st.lists(st.integers(0, 6), min_size=3, max_size=3, unique=True))  # fmt: skip
def test_classification_matches_intersection(t1, t2):
    c = classify_panels(t1, t2)
    k = len(set(t1) & set(t2))
    assert int(c.kind) == k
    assert sorted(c.perm_test) == [0, 1, 2] and sorted(c.perm_trial) == [0, 1, 2]
    a = [t1[i] for i in c.perm_test]
    b = [t2[i] for i in c.perm_trial]
    assert a[:k] == b[:k]
    if c.kind == PairKind.SHARED_EDGE:
        # the test triangle keeps its cyclic orientation
        assert a in ([t1[i], t1[(i + 1) % 3], t1[(i + 2) % 3]] for i in range(3))


@pytest.mark.parametrize("kind", list(PairKind))
@pytest.mark.parametrize("order", [2, 3, 6])
def test_pair_weights_sum_to_quarter(kind, order):
    # the transforms carry a cubic Jacobian, exact from two points per direction
    rule = singular_pair_rule(kind, order)
    assert rule.weights.sum() == pytest.approx(0.25, rel=1e-13)
    for pts in (rule.x, rule.y):
        assert np.allclose(pts.sum(axis=1), 1, atol=1e-13)
        assert np.all(pts >= -1e-14)


def test_pair_rule_bad_order():
    with pytest.raises(QuadratureError):
        singular_pair_rule(PairKind.COINCIDENT, 0)


@pytest.mark.parametrize("kind", list(PairKind))
def test_zero_kernel(kind):
    rule = singular_pair_rule(kind, 5)
    assert integrate_pair(rule, UNIT, EDGE_TRIAL, lambda x, y, bx, by: np.zeros(len(x))) == 0.0


@pytest.mark.parametrize("kind", [PairKind.SHARED_VERTEX, PairKind.SHARED_EDGE, PairKind.COINCIDENT])
def test_singular_rules_integrate_polynomials(kind):
    # smooth integrands are integrated exactly by every class
    f = lambda x, y, bx, by: x[:, 0] ** 2 * y[:, 1] + x[:, 1] * y[:, 0]  # noqa: E731
    exact = 1 / 12 * 1 / 6 + (1 / 6) ** 2
    assert integrate_pair(singular_pair_rule(kind, 6), UNIT, UNIT, f) == pytest.approx(exact, rel=1e-12)


def test_disjoint_is_tensor_gauss():
    far = UNIT + [3.0, 1.0, 2.0]
    rule = gauss_triangle(4)
    X = rule.points @ UNIT
    Y = rule.points @ far
    ref = sum(
        wi * wj / (4 * math.pi * np.linalg.norm(xi - yj))
        for (wi, xi), (wj, yj) in itertools.product(zip(rule.weights, X), zip(rule.weights, Y))
    )
    got = integrate_pair(singular_pair_rule(PairKind.DISJOINT, 4), UNIT, far, single_layer)
    assert got == pytest.approx(ref * 4 * 0.25, rel=1e-12)


@pytest.mark.parametrize(
    "kind, trial, oracle, order, tol",
    [
        (PairKind.COINCIDENT, UNIT, COINCIDENT_SL, QuadratureOrders().coincident, 2e-7),
        (PairKind.SHARED_EDGE, EDGE_TRIAL, EDGE_SL, QuadratureOrders().shared_edge, 2e-7),
        (PairKind.SHARED_VERTEX, VERTEX_TRIAL, VERTEX_SL, QuadratureOrders().shared_vertex, 5e-7),
    ],
)
def test_singular_rules_match_oracle(kind, trial, oracle, order, tol):
    assert pair_value(kind, order, UNIT, trial) == pytest.approx(oracle, rel=tol)


@pytest.mark.parametrize(
    "kind, trial, order",
    [
        (PairKind.COINCIDENT, UNIT, QuadratureOrders().coincident),
        (PairKind.SHARED_EDGE, EDGE_TRIAL, QuadratureOrders().shared_edge),
        (PairKind.SHARED_VERTEX, VERTEX_TRIAL, QuadratureOrders().shared_vertex),
    ],
)
def test_order_increase_changes_little_at_assembly_order(kind, trial, order):
    a = pair_value(kind, order, UNIT, trial)
    b = pair_value(kind, order + 2, UNIT, trial)
    assert abs(a - b) < 1e-8


def test_coincident_converges_monotonically_toward_oracle():
    errors = [abs(pair_value(PairKind.COINCIDENT, p, UNIT, UNIT) - COINCIDENT_SL) for p in (4, 6, 8, 10)]
    assert all(b < a for a, b in zip(errors, errors[1:]))


@pytest.mark.parametrize("perm", list(itertools.permutations(range(3))))
def test_coincident_relabel_symmetry(perm):
    tri = np.array([[0.1, 0.0, 0.2], [1.3, 0.2, 0.0], [0.4, 0.9, 0.5]])
    ref = pair_value(PairKind.COINCIDENT, 8, tri, tri)
    got = pair_value(PairKind.COINCIDENT, 8, tri[list(perm)], tri[list(perm)])
    assert got == pytest.approx(ref, rel=1e-12)
