import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depguide import autodiff as ad
from depguide.oracles import fd_gradient, fd_hvp, rel_err


def half_sq(x):
    return ad.mul(0.5, ad.dot(x, x))


def prod12(x):
    return ad.mul(ad.take(x, 0), ad.take(x, 1))


def test_gradient_examples():
    assert np.array_equal(ad.gradient(half_sq, [3.0, 4.0]), [3.0, 4.0])
    assert np.array_equal(ad.gradient(prod12, [2.0, 5.0]), [5.0, 2.0])


def test_hvp_examples():
    v = np.array([0.3, -1.2])
    assert np.allclose(ad.hvp(half_sq, [1.0, 2.0], v), v, rtol=0, atol=1e-15)
    assert np.array_equal(ad.hvp(prod12, [2.0, 5.0], [1.0, 0.0]), [0.0, 1.0])


def test_logsumexp_of_affine_forms_matches_fd():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 4))
    c, d = rng.normal(size=2)
    f = ad.ScalarFunction(lambda x: ad.logsumexp(ad.stack([ad.add(ad.dot(a, x), c), ad.add(ad.dot(b, x), d)])), 4)
    x = rng.normal(size=4)
    assert rel_err(ad.gradient(f, x), fd_gradient(f.value, x)) <= 1e-6


def test_scalar_trick_examples():
    c = np.array([1.0, -2.0, 0.5])
    v = np.array([0.2, 0.7, -1.0])
    field = lambda x: ad.neg(ad.sub(x, c))
    assert np.allclose(ad.scalar_trick_grad(field, np.zeros(3), v), -v, rtol=0, atol=1e-15)
    m = np.array([[2.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.0, -1.0, 1.0]])
    lin = lambda x: ad.stack([ad.dot(row, x) for row in m])
    assert np.allclose(ad.scalar_trick_grad(lin, np.ones(3), v), m @ v, rtol=0, atol=1e-14)


def smooth_energy(w):
    def f(x):
        r = ad.sqrt(ad.add(1.0, ad.dot(x, x)))
        return ad.add(ad.logsumexp(ad.stack([ad.dot(w, x), ad.mul(0.5, r)])), ad.log(ad.add(2.0, ad.exp(ad.neg(r)))))
    return f


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_hvp_equals_scalar_trick(seed, d):
    rng = np.random.default_rng(seed)
    f = smooth_energy(rng.normal(size=d))
    x, v = rng.normal(size=(2, d))
    assert rel_err(ad.hvp(f, x, v), ad.scalar_trick_grad(ad.gradient_field(f), x, v)) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hvp_linear_in_direction(seed):
    rng = np.random.default_rng(seed)
    f = smooth_energy(rng.normal(size=3))
    x, u, v = rng.normal(size=(3, 3))
    a, b = rng.normal(size=2)
    lhs = ad.hvp(f, x, a * u + b * v)
    rhs = a * ad.hvp(f, x, u) + b * ad.hvp(f, x, v)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(lhs))


def test_hvp_matches_fd_of_gradient():
    rng = np.random.default_rng(4)
    f = smooth_energy(rng.normal(size=5))
    x, v = rng.normal(size=(2, 5))
    assert rel_err(ad.hvp(f, x, v), fd_hvp(lambda y: ad.gradient(f, y), x, v)) <= 1e-4


def test_constant_function_has_zero_gradient():
    g = ad.gradient(lambda x: ad.add(ad.mul(0.0, ad.vsum(x)), 3.0), np.ones(4))
    assert np.array_equal(g, np.zeros(4))
    assert np.array_equal(ad.hvp(lambda x: 7.0, np.ones(2), np.ones(2)), np.zeros(2))


def test_zero_tangent_reproduces_plain_value():
    rng = np.random.default_rng(1)
    f = smooth_energy(rng.normal(size=4))
    x = rng.normal(size=4)
    dual = f(ad.Dual(x, np.zeros(4)))
    assert dual.value == f(x)
    assert dual.tangent == 0.0


def test_dual_arithmetic_rules():
    a, b = ad.Dual(2.0, 1.0), ad.Dual(3.0, -2.0)
    p = a * b
    assert (p.value, p.tangent) == (6.0, 2.0 * -2.0 + 1.0 * 3.0)
    e = a.exp()
    assert e.tangent == np.exp(2.0)
    assert a.log().tangent == 0.5
    assert a.sqrt().tangent == pytest.approx(0.5 / np.sqrt(2.0), rel=1e-15)


def test_non_finite_reports_subexpression():
    f = ad.ScalarFunction(lambda x: ad.log(ad.vsum(x)), 2, name="logsum")
    with pytest.raises(ad.EvaluationError, match="logsum"):
        ad.gradient(f, np.array([-1.0, -1.0]))


def test_logsumexp_keeps_precision_in_tail():
    a = np.array([0.0, -40.0])
    assert ad.logsumexp(a) == np.log1p(np.exp(-40.0))
    assert ad.logsumexp(a) > 0.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        ad.scalar_trick_grad(lambda x: x, np.ones(3), np.ones(2))
    with pytest.raises(ValueError):
        ad.gradient(ad.ScalarFunction(half_sq, 3), np.ones(2))
