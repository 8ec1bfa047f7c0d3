import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kkgeom.liealg import (
    AlgebraError, AlgebraMetric, StructureConstants, abelian, ad_star, ad_star_matrix, bracket,
    is_ad_invariant, oct_basis, oct_conj, oct_mul, oct_norm, oct_table, qconj, qmul, qnorm,
    structure_constants_from_commutators, su2,
)
from kkgeom.hopf import HopfBundle

FIXTURES = Path(__file__).parent / "fixtures"

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
quat = arrays(np.float64, 4, elements=finite)
octo = arrays(np.float64, 8, elements=finite)


def test_su2_bracket_from_quaternion_commutators():
    np.testing.assert_array_equal(bracket(su2(), [1, 0, 0], [0, 1, 0]), [0, 0, 2])
    assert su2().jacobi_residual() < 1e-12


def test_abelian_bracket_vanishes():
    assert not np.any(bracket(abelian(3), [1, 2, 3], [-1, 0, 4]))
    assert abelian(2).is_abelian


def test_bracket_rejects_wrong_length():
    with pytest.raises(ValueError):
        bracket(su2(), [1, 0], [0, 1, 0])


def test_structure_constants_reject_non_antisymmetric():
    c = np.zeros((2, 2, 2))
    c[0, 0, 1] = 1.0
    with pytest.raises(AlgebraError):
        StructureConstants(c)


def test_structure_constants_round_trip_dict():
    sc = su2()
    again = StructureConstants.from_dict(json.loads(json.dumps(sc.to_dict())))
    np.testing.assert_array_equal(again.c, sc.c)


def test_s7_vertical_frame_closes_on_su2():
    # brackets of p -> p xi_a for xi in (i, j, k) at random points of S^7
    bundle = HopfBundle("quaternionic")
    rng = np.random.default_rng(3)
    p = rng.normal(size=(200, 8))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    D = bundle.vertical_frame(p)
    # hand-entered [e_a, e_b] = 2 eps_abc e_c against commutators of the octonion units i, j, k
    eps2 = np.zeros((3, 3, 3))
    for a, b, c in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        eps2[c, a, b], eps2[c, b, a] = 2.0, -2.0
    sc = structure_constants_from_commutators(np.eye(8)[1:4], oct_mul)
    assert sc.jacobi_residual() < 1e-12
    np.testing.assert_array_equal(sc.c, eps2)
    np.testing.assert_array_equal(su2().c, eps2)
    # linear fields X(p) = p a: [X, Y](p) = (p a) b - (p b) a, evaluated through the frame map
    for a, b, c in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        lie = bundle.vertical_frame(D[:, a])[:, b] - bundle.vertical_frame(D[:, b])[:, a]
        np.testing.assert_allclose(lie, 2 * D[:, c], atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(vec3, vec3)
def test_bracket_antisymmetric(x, y):
    np.testing.assert_allclose(bracket(su2(), x, y), -bracket(su2(), y, x), atol=1e-12)
    assert np.max(np.abs(bracket(su2(), x, x))) == 0


def test_ad_star_examples():
    np.testing.assert_allclose(ad_star(su2(), np.eye(3), [1, 0, 0], [0, 1, 0]), [0, 0, -2], atol=1e-15)
    np.testing.assert_allclose(ad_star(su2(), np.eye(3), [0.3, -1, 2], [0.3, -1, 2]), 0, atol=1e-14)
    assert not np.any(ad_star(abelian(2), np.eye(2), [1, 2], [3, 4]))


def test_ad_star_pairing_identity_random_metrics():
    rng = np.random.default_rng(0)
    sc = su2()
    worst = 0.0
    for _ in range(100):
        P = rng.normal(size=(3, 3))
        beta = P @ P.T + 0.5 * np.eye(3)
        for z in np.eye(3):
            S = ad_star_matrix(sc, beta, z)
            ad = sc.ad(z)
            # beta(ad* x1, x2) = beta(x1, ad x2) for all basis x1, x2
            worst = max(worst, np.max(np.abs(S.T @ beta - beta @ ad)))
    assert worst < 1e-11


def test_ad_star_is_minus_ad_for_invariant_metric():
    sc = su2()
    for z in np.random.default_rng(1).normal(size=(20, 3)):
        assert np.max(np.abs(ad_star_matrix(sc, 2.5 * np.eye(3), z) + sc.ad(z))) < 1e-12


def test_ad_star_singular_metric_raises():
    with pytest.raises((ArithmeticError, np.linalg.LinAlgError, ValueError)):
        ad_star(su2(), np.zeros((3, 3)), [1, 0, 0], [0, 1, 0])


def test_ad_invariance_predicate():
    assert is_ad_invariant(su2(), np.eye(3))
    assert not is_ad_invariant(su2(), np.diag([1.0, 1.0, 2.0]))
    assert is_ad_invariant(abelian(2), [[2.0, 0.3], [0.3, 1.0]])


def test_algebra_metric_rejects_indefinite_sample():
    with pytest.raises(AlgebraError):
        AlgebraMetric(lambda x: np.diag([1.0, -1.0]), samples=[np.zeros(2)])
    with pytest.raises(AlgebraError):
        AlgebraMetric.constant([[1.0, 2.0], [0.0, 1.0]])


def test_octonion_table_matches_fixture():
    fixture = json.loads((FIXTURES / "octonion_table.json").read_text())
    assert oct_table() == fixture["table"]


def test_octonion_units():
    i, l, il = oct_basis("i"), oct_basis("l"), oct_basis("il")
    np.testing.assert_array_equal(oct_mul(i, i), -oct_basis("1"))
    np.testing.assert_array_equal(oct_mul(l, i), -il)
    x = np.arange(8.0)
    np.testing.assert_array_equal(oct_mul(oct_basis("1"), x), x)


def test_octonion_norm_multiplicative_bulk():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(2, 10_000, 8))
    rel = np.abs(oct_norm(oct_mul(x, y)) - oct_norm(x) * oct_norm(y)) / (oct_norm(x) * oct_norm(y))
    assert rel.max() < 1e-13


@settings(max_examples=100, deadline=None)
@given(quat, quat)
def test_quaternion_conjugation_reverses_products(p, q):
    np.testing.assert_allclose(qconj(qmul(p, q)), qmul(qconj(q), qconj(p)), atol=1e-12, rtol=0)
    assert abs(qnorm(qmul(p, q)) - qnorm(p) * qnorm(q)) <= 1e-13 * max(1.0, qnorm(p) * qnorm(q))


@settings(max_examples=100, deadline=None)
@given(octo, octo)
def test_octonion_alternative_and_normed(x, y):
    scale = max(1.0, float(oct_norm(x) * oct_norm(y)))
    assert abs(oct_norm(oct_mul(x, y)) - oct_norm(x) * oct_norm(y)) <= 1e-13 * scale
    # alternativity x(xy) = (xx)y holds although associativity fails
    lhs = oct_mul(x, oct_mul(x, y))
    rhs = oct_mul(oct_mul(x, x), y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * scale * max(1.0, float(oct_norm(x))))
    np.testing.assert_allclose(oct_conj(oct_mul(x, y)), oct_mul(oct_conj(y), oct_conj(x)),
                               atol=1e-12 * scale)
