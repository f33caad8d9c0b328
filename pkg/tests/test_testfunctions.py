import numpy as np
import pytest
from hypothesis import given, strategies as st

from matchsim import testfunctions as tf


def finite_difference(f, s, h=1e-4):
    K = s.size
    g = np.empty(K)
    H = np.empty((K, K))
    for i in range(K):
        e = np.zeros(K)
        e[i] = h
        g[i] = (f.value(s + e) - f.value(s - e)) / (2 * h)
        for j in range(K):
            d = np.zeros(K)
            d[j] = h
            H[i, j] = (f.value(s + e + d) - f.value(s + e - d) - f.value(s - e + d)
                       + f.value(s - e - d)) / (4 * h * h)
    return g, H


def all_functions():
    for K in (2, 3, 4):
        yield from tf.library(K)
        yield tf.coordinate_square(K, K - 1)
        yield tf.difference_bump(K, radius=0.8, power=3, centers=np.full(K - 1, 0.2))


@pytest.mark.parametrize("f", list(all_functions()), ids=lambda f: f.name)
def test_derivatives_match_finite_differences(f):
    K = f.gradient(np.zeros(len(f.support[0]))).size
    rng = np.random.default_rng(K)
    for _ in range(20):
        s = rng.uniform(0, 1.2, K)
        s[rng.integers(K)] = 0.0
        g, H = finite_difference(f, s)
        scale = max(1.0, np.abs(f.hessian(s)).max())
        assert np.allclose(f.gradient(s), g, rtol=1e-5, atol=1e-5 * scale)
        assert np.allclose(f.hessian(s), H, rtol=1e-5, atol=1e-5 * scale * 10)
        assert np.array_equal(f.hessian(s), f.hessian(s).T) or np.allclose(f.hessian(s), f.hessian(s).T, atol=1e-14)


def test_bump_needs_power_three():
    with pytest.raises(ValueError):
        tf.difference_bump(2, power=2)


@given(st.integers(2, 4), st.data())
def test_difference_bump_gradient_sums_to_zero(K, data):
    f = tf.difference_bump(K, radius=1.0)
    s = np.array([data.draw(st.floats(0, 2)) for _ in range(K)])
    assert abs(f.gradient(s).sum()) <= 1e-12


def test_bump_vanishes_outside_support_on_manifold():
    f = tf.difference_bump(3, radius=1.0)
    lo, hi = f.support
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = rng.uniform(0, 5, 3)
        s[rng.integers(3)] = 0.0
        if np.any(s > hi):
            assert f.value(s) == 0.0


def test_combine_is_linear():
    f, g = tf.linear([1.0, -2.0]), tf.coordinate_square(2, 0)
    h = tf.combine(2.0, f, -3.0, g)
    s = np.array([0.4, 0.0])
    assert h(s) == pytest.approx(2 * f(s) - 3 * g(s))
    assert np.allclose(h.gradient(s), 2 * f.gradient(s) - 3 * g.gradient(s))
    assert (f + g)(s) == pytest.approx(f(s) + g(s))
