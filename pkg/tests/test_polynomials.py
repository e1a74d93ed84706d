import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import hermite_e, legendre

from localpc.polynomials import (MultiIndexSet, PolynomialFamily, eval_all, eval_multivariate,
                                 eval_univariate, total_order_set)

H, L = PolynomialFamily.HERMITE, PolynomialFamily.LEGENDRE


def _oracle(family, degree, x):
    """Normalized polynomial from numpy's monomial-basis classes."""
    c = np.zeros(degree + 1)
    c[-1] = 1.0
    if family is H:
        return hermite_e.hermeval(x, c) / math.sqrt(math.factorial(degree))
    return legendre.legval(x, c) * math.sqrt(2 * degree + 1)


def test_spec_examples():
    assert eval_univariate(H, 0, 3.7) == 1.0
    assert eval_univariate(H, 2, 0.0) == pytest.approx(-1 / math.sqrt(2), abs=1e-14)
    assert eval_univariate(L, 1, 0.5) == pytest.approx(math.sqrt(3) * 0.5, abs=1e-14)


@pytest.mark.parametrize("family", [H, L])
def test_gram_matrix_is_identity(family):
    if family is H:
        x, w = hermite_e.hermegauss(64)
        w = w / math.sqrt(2 * math.pi)
    else:
        x, w = legendre.leggauss(64)
        w = w / 2
    V = eval_all(family, 12, x)
    np.testing.assert_allclose(V.T @ (w[:, None] * V), np.eye(13), atol=1e-10)


@pytest.mark.parametrize("family", [H, L])
def test_matches_monomial_oracle(family):
    x = np.linspace(-4, 4, 81)
    for n in range(11):
        ref = _oracle(family, n, x)
        got = eval_univariate(family, n, x)
        np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_negative_degree_rejected():
    with pytest.raises(ValueError):
        eval_univariate(H, -1, 0.0)


def test_total_order_examples():
    assert list(total_order_set(1, 4)) == [(0,), (1,), (2,), (3,), (4,)]
    assert list(total_order_set(2, 1)) == [(0, 0), (1, 0), (0, 1)]
    assert len(total_order_set(9, 2)) == 55
    assert len(total_order_set(2, 2)) == 6


@given(st.integers(1, 5), st.integers(0, 5))
def test_total_order_size_and_admissible(d, n):
    s = total_order_set(d, n)
    assert len(s) == math.comb(d + n, d)
    assert s.is_admissible()
    assert s.max_order == n
    assert len(set(s)) == len(s)
    orders = s.indices.sum(axis=1)
    assert np.all(np.diff(orders) >= 0)


def test_admissibility_detects_gap():
    assert not MultiIndexSet([(0, 0), (0, 2)]).is_admissible()
    assert MultiIndexSet([(0, 0), (1, 0), (0, 1), (1, 1)]).is_admissible()


def test_restrict_caps_each_dimension():
    s = total_order_set(2, 4).restrict(2)
    assert len(s) == 9
    assert s.indices.max() == 2 and s.max_order == 4


def test_multivariate_examples():
    np.testing.assert_array_equal(eval_multivariate(total_order_set(3, 0), H, [0.3, -1, 2]), [1.0])
    assert eval_multivariate(MultiIndexSet([(1, 1)]), H, [1.0, 1.0])[0] == pytest.approx(1.0)
    assert eval_multivariate(total_order_set(2, 2), H, [0.1, 0.2]).shape == (6,)
    with pytest.raises(ValueError):
        eval_multivariate(total_order_set(2, 2), H, [0.1, 0.2, 0.3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_multivariate_is_product_of_univariate(y):
    fams = [H, L, H]
    s = total_order_set(3, 4)
    got = eval_multivariate(s, fams, y)
    ref = [np.prod([eval_univariate(f, i, v) for f, i, v in zip(fams, idx, y)]) for idx in s]
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)
