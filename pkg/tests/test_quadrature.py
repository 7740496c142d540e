import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from kingfp.quadrature import (chebyshev_nodes, clenshaw_curtis_rule, clenshaw_curtis_sub,
                               composite_clenshaw_curtis, gauss_legendre, romberg, romberg_depth)


def test_gauss_one_and_two_points():
    r1 = gauss_legendre(1)
    assert r1.nodes.tolist() == [0.0] and r1.weights.tolist() == [2.0]
    r2 = gauss_legendre(2)
    assert r2.nodes == pytest.approx([-1 / math.sqrt(3), 1 / math.sqrt(3)], abs=2e-16)
    assert r2.weights == pytest.approx([1.0, 1.0], abs=1e-15)


def test_gauss_five_points_degree_eight():
    r = gauss_legendre(5)
    assert abs(r.integrate(r.nodes**8) - 2 / 9) <= 1e-15


@pytest.mark.parametrize("n", [0, 129, 2.5])
def test_gauss_order_out_of_range(n):
    with pytest.raises(ValueError):
        gauss_legendre(n)


@pytest.mark.parametrize("n", [2, 4, 8, 16, 32])
def test_gauss_degree_exactness(n):
    r = gauss_legendre(n)
    for k in range(2 * n):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert abs(r.integrate(r.nodes**k) - exact) <= 1e-13


@pytest.mark.parametrize("n", [3, 20, 64, 128])
def test_gauss_rule_invariants(n):
    r = gauss_legendre(n)
    assert abs(r.weights.sum() - 2.0) <= 1e-14
    assert np.all(np.diff(r.nodes) > 0)
    assert np.array_equal(r.nodes, -r.nodes[::-1])
    assert np.all(r.weights > 0)
    ref_x, ref_w = np.polynomial.legendre.leggauss(n)
    assert np.max(np.abs(r.nodes - ref_x)) <= 1e-14
    assert np.max(np.abs(r.weights / ref_w - 1)) <= 1e-10


def test_romberg_quadratic_is_exact():
    x = np.linspace(0, 1, 9)
    res = romberg(x**2, 0, 1)
    assert res.value == pytest.approx(1 / 3, abs=1e-16)
    assert res.error_estimate <= 1e-15


def test_romberg_gaussian_moment():
    x = np.linspace(0, 10, 129)
    res = romberg(np.exp(-x * x) * x * x, 0, 10)
    assert abs(res.value / (math.sqrt(math.pi) / 4) - 1) <= 1e-12


def test_romberg_zero_integrand():
    res = romberg(np.zeros(17), 0, 3)
    assert res.value == 0.0 and res.error_estimate == 0.0


@pytest.mark.parametrize("count", [1, 2, 4, 10, 16])
def test_romberg_bad_sample_count(count):
    with pytest.raises(ValueError):
        romberg(np.ones(count))


def test_romberg_depth():
    assert romberg_depth(3) == 1
    assert romberg_depth(129) == 7


def test_romberg_batches_along_last_axis():
    x = np.linspace(0, 1, 33)
    res = romberg(np.stack([x, x**3]), 0, 1)
    assert res.value == pytest.approx([0.5, 0.25], abs=1e-15)


def test_romberg_error_estimate_bounds_true_error():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a, b, c = rng.uniform(0.2, 3.0), rng.uniform(-2, 2), rng.uniform(0.5, 4.0)
        n2 = int(rng.integers(3, 8))
        x = np.linspace(0, c, 2**n2 + 1)

        def g(t):
            return np.exp(-a * t) * np.cos(b * t) + t**2

        exact, _ = integrate.quad(g, 0, c, epsabs=0, epsrel=1e-13)
        res = romberg(g(x), 0, c)
        assert abs(res.value - exact) / abs(exact) <= 10 * res.error_estimate + 1e-15


def test_clenshaw_curtis_polynomial_on_unit_interval():
    z = chebyshev_nodes(0, 1, 7)
    assert clenshaw_curtis_sub(0, np.ones(7), z) == pytest.approx(1 / 3, abs=1e-12)
    assert clenshaw_curtis_sub(0, np.zeros(7), z) == 0.0


def test_clenshaw_curtis_length_mismatch():
    with pytest.raises(ValueError):
        clenshaw_curtis_sub(0, np.ones(6), chebyshev_nodes(0, 1, 7))


def test_clenshaw_curtis_nodes_include_endpoints():
    z = chebyshev_nodes(0.3, 0.7, 5)
    assert z[0] == 0.3 and z[-1] == 0.7
    assert np.all(np.diff(z) > 0)


def test_clenshaw_curtis_weights_sum_to_two():
    for n in (3, 5, 7, 8, 17):
        _, w = clenshaw_curtis_rule(n)
        assert w.sum() == pytest.approx(2.0, abs=1e-14)


def test_composite_gaussian_against_adaptive_quadrature():
    edges = np.linspace(0, 2, 5)
    pieces = np.array([chebyshev_nodes(a, b, 9) for a, b in zip(edges[:-1], edges[1:])])
    total = sum(clenshaw_curtis_sub(0, np.exp(-z * z), z) for z in pieces)
    exact, _ = integrate.quad(lambda z: z * z * math.exp(-z * z), 0, 2, epsabs=0, epsrel=1e-13)
    assert total == pytest.approx(exact, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.2, 3.0), b=st.floats(-3.0, 3.0), n2=st.integers(4, 7))
def test_composite_clenshaw_curtis_matches_romberg(a, b, n2):
    span = 3.0
    edges = np.linspace(0, span, 2**n2 + 1)
    pieces = np.array([chebyshev_nodes(lo, hi, 7) for lo, hi in zip(edges[:-1], edges[1:])])

    def g(t):
        return np.exp(-a * t) * np.sin(b * t + 1.0)

    cc = composite_clenshaw_curtis(g(pieces), edges, 7).sum()
    rb = romberg(g(edges), 0, span)
    tol = max(1e-10, rb.error_estimate * abs(rb.value))
    assert abs(cc - rb.value) <= tol
