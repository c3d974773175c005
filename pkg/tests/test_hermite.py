import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import hermite_e

from sgpdf import hermite
from sgpdf.errors import ConfigurationError, DimensionError


def gaussian_moment(k):
    return 0.0 if k % 2 else float(math.prod(range(k - 1, 0, -2)))


def abs_gaussian_moment(k):
    return 2 ** (k / 2) * math.gamma((k + 1) / 2) / math.sqrt(math.pi)


def triple_closed_form(i, j, k):
    """E[He_i He_j He_k] for the monic polynomials."""
    s2 = i + j + k
    if s2 % 2:
        return 0.0
    s = s2 // 2
    if s < max(i, j, k):
        return 0.0
    return math.factorial(i) * math.factorial(j) * math.factorial(k) / (
        math.factorial(s - i) * math.factorial(s - j) * math.factorial(s - k))


@pytest.mark.parametrize("n", range(1, 14))
def test_gauss_hermite_exactness(n):
    rule = hermite.gauss_hermite(n)
    x = rule.nodes[:, 0]
    for k in range(2 * n):
        exact = gaussian_moment(k)
        val = rule.weights @ x**k
        # odd moments vanish; measure them against E|x|^k
        assert abs(val - exact) <= 1e-11 * max(1.0, abs_gaussian_moment(k))


@pytest.mark.parametrize("n", [2, 5, 13, 30])
def test_gauss_hermite_against_numpy(n):
    x_ref, w_ref = hermite_e.hermegauss(n)
    rule = hermite.gauss_hermite(n)
    assert np.allclose(rule.nodes[:, 0], x_ref, atol=1e-12)
    assert np.allclose(rule.weights, w_ref / math.sqrt(2 * math.pi), rtol=1e-9, atol=1e-300)


def test_orthonormality():
    rule = hermite.gauss_hermite(12)
    H = hermite.he_orthonormal_table(10, rule.nodes[:, 0])
    G = H.T @ (rule.weights[:, None] * H)
    assert np.abs(G - np.eye(11)).max() < 1e-11


def test_he_matches_numpy_hermite_e():
    x = np.linspace(-4, 4, 41)
    for n in range(12):
        coef = np.zeros(n + 1)
        coef[n] = 1.0
        assert np.allclose(hermite.he(n, x), hermite_e.hermeval(x, coef), rtol=1e-12, atol=1e-9)


def test_degree_guard():
    with pytest.raises(ConfigurationError):
        hermite.he(41, 0.0)


@pytest.mark.parametrize("N,p", [(1, 4), (2, 4), (2, 5), (3, 3), (4, 2)])
def test_index_set_size(N, p):
    assert len(hermite.multi_index_set(N, p)) == math.comb(N + p, p)


def test_index_set_order():
    s = hermite.multi_index_set(2, 2)
    assert list(s) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert s.position((1, 1)) == 4


def test_index_set_errors():
    with pytest.raises(ConfigurationError):
        hermite.multi_index_set(0, 2)
    with pytest.raises(ConfigurationError):
        hermite.multi_index_set(2, -1)


def test_tensor_rule_size_and_guard():
    r = hermite.tensor_rule(5, 3)
    assert r.nodes.shape == (125, 3)
    assert abs(r.weights.sum() - 1.0) < 1e-14
    with pytest.raises(ConfigurationError):
        hermite.tensor_rule(50, 4)


def test_triple_products_closed_form():
    T = hermite.triple_product_1d(5, 4)
    for k in range(6):
        for i in range(5):
            for j in range(5):
                ref = triple_closed_form(k, i, j) / math.sqrt(
                    math.factorial(k) * math.factorial(i) * math.factorial(j))
                assert abs(T[k, i, j] - ref) < 1e-12


def test_multivariate_triple_products_are_symmetric():
    G = hermite.triple_products(hermite.multi_index_set(2, 5), hermite.multi_index_set(2, 4))
    assert np.allclose(G, np.swapaxes(G, 1, 2))
    assert np.allclose(G[0], np.eye(G.shape[1]), atol=1e-13)


def test_eval_basis_consistent_with_single():
    s = hermite.multi_index_set(3, 3)
    eps = np.array([[0.3, -1.2, 2.0], [0.0, 0.5, -0.7]])
    B = hermite.eval_basis(s, eps)
    for k, idx in enumerate(s):
        assert np.allclose(B[:, k], hermite.eval_multivariate(idx, eps))
    with pytest.raises(DimensionError):
        hermite.eval_basis(s, np.zeros(2))


@given(st.integers(1, 40))
def test_weights_positive_symmetric_and_normalized(n):
    rule = hermite.gauss_hermite(n)
    x, w = rule.nodes[:, 0], rule.weights
    assert np.all(w > 0)
    assert abs(w.sum() - 1.0) < 1e-12
    assert np.allclose(x, -x[::-1])


def test_points_for_degree():
    assert hermite.points_for_degree(24) == 13
    assert hermite.points_for_degree(0) == 1
