import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.special import ndtri
from scipy.stats import norm

from bisimlab.transport import (DiagonalGaussian, DiscreteDistribution, optimal_coupling,
                                product_coupling_cost, w1_discrete, w1_discrete_bruteforce,
                                w1_unchecked, w2_diag_gaussian, wp_univariate)


def lp_w1(p, q, cost):
    """Independent oracle: the transport LP solved by HiGHS."""
    m, n = len(p), len(q)
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A_eq[m + j, j::n] = 1
    res = linprog(np.ravel(cost), A_eq=A_eq, b_eq=np.concatenate([p, q]), bounds=(0, None), method="highs")
    return res.fun


def simplex(size):
    return st.lists(st.floats(0.0, 1.0), min_size=size, max_size=size).filter(lambda w: sum(w) > 1e-3).map(
        lambda w: np.array(w) / sum(w))


@st.composite
def transport_instance(draw, max_support=4):
    m = draw(st.integers(1, max_support))
    n = draw(st.integers(1, max_support))
    p = draw(simplex(m))
    q = draw(simplex(n))
    cost = np.array(draw(st.lists(st.floats(0.0, 10.0), min_size=m * n, max_size=m * n))).reshape(m, n)
    return p, q, cost


def test_identity_coupling_is_free():
    p = np.array([0.2, 0.3, 0.5])
    cost = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    assert w1_discrete(p, p, cost) == 0.0
    assert w1_discrete_bruteforce(p, p, cost) == 0.0


def test_one_parameter_family():
    # couplings of (.5,.5) and (1,0) are forced: all mass moves to x1
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert w1_discrete([0.5, 0.5], [1.0, 0.0], cost) == pytest.approx(0.5, abs=1e-12)


def test_identical_two_point_laws_cost_nothing_but_product_pays_half():
    D = 2.5
    d = np.array([[0.0, D], [D, 0.0]])
    p = [0.5, 0.5]
    assert w1_discrete(p, p, d) == 0.0
    assert product_coupling_cost(p, p, d) == pytest.approx(D / 2)


def test_point_masses_pay_their_cost():
    cost = np.array([[0.0, 3.0], [3.0, 0.0]])
    assert w1_discrete_bruteforce([1.0, 0.0], [0.0, 1.0], cost) == pytest.approx(3.0)


@given(transport_instance())
def test_network_simplex_matches_linear_program(inst):
    p, q, cost = inst
    # HiGHS works to ~1e-7 feasibility, so this oracle is looser than the vertex one
    assert w1_discrete(p, q, cost) == pytest.approx(lp_w1(p, q, cost), abs=1e-6)


@given(transport_instance())
def test_bruteforce_matches_network_simplex(inst):
    p, q, cost = inst
    assert abs(w1_discrete(p, q, cost) - w1_discrete_bruteforce(p, q, cost)) <= 1e-9


@given(transport_instance())
def test_optimal_coupling_has_right_marginals(inst):
    p, q, cost = inst
    plan = optimal_coupling(p, q, cost)
    assert np.all(plan >= 0)
    np.testing.assert_allclose(plan.sum(1), p, atol=1e-9)
    np.testing.assert_allclose(plan.sum(0), q, atol=1e-9)
    assert w1_discrete(p, q, cost) <= product_coupling_cost(p, q, cost) + 1e-9


def test_fast_path_agrees(rng):
    for _ in range(50):
        p, q = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        cost = np.ascontiguousarray(rng.uniform(0, 1, (5, 5)))
        assert w1_unchecked(p, q, cost) == pytest.approx(w1_discrete(p, q, cost), abs=1e-12)


def test_bruteforce_refuses_large_problems():
    with pytest.raises(ValueError):
        w1_discrete_bruteforce(np.ones(5) / 5, np.ones(4) / 4, np.zeros((5, 4)))


@pytest.mark.parametrize("p, q, cost", [
    ([0.5, 0.6], [1.0], [[0.0], [1.0]]),
    ([0.5, 0.5], [1.0], [[0.0, 1.0]]),
    ([1.0], [1.0], [[-1.0]]),
    ([-0.5, 1.5], [1.0], [[0.0], [0.0]]),
])
def test_invalid_inputs(p, q, cost):
    with pytest.raises(ValueError):
        w1_discrete(p, q, np.array(cost))


def test_discrete_distribution_validates():
    with pytest.raises(ValueError):
        DiscreteDistribution([0.2, 0.2])
    assert len(DiscreteDistribution([0.25, 0.75])) == 2


def test_wp_identical_is_zero():
    f = norm(0, 1).ppf
    assert wp_univariate(f, f, 1) == 0.0


def test_wp_shift_property():
    mu = 1.7
    assert wp_univariate(ndtri, lambda u: mu + ndtri(u), 1, 1_000_000) == pytest.approx(mu, abs=1e-6)


def test_wp_scale_power_two():
    val = wp_univariate(ndtri, lambda u: 2 * ndtri(u), 2, 1_000_000)
    assert val == pytest.approx(1.0, abs=1e-5)


def test_wp_scale_power_one_closed_form():
    # E|Z| for the comonotone coupling of N(0,1) and N(0,2)
    val = wp_univariate(ndtri, lambda u: 2 * ndtri(u), 1, 1_000_000)
    assert val == pytest.approx(math.sqrt(2 / math.pi), abs=1e-5)


def test_wp_rejects_power_below_one():
    with pytest.raises(ValueError):
        wp_univariate(ndtri, ndtri, 0.5)


def test_w2_closed_form_cases():
    g = DiagonalGaussian([0.0, 0.0], [1.0, 1.0])
    assert w2_diag_gaussian(g, g) == 0.0
    assert w2_diag_gaussian(DiagonalGaussian([0.0], [1.0]), DiagonalGaussian([3.0], [1.0])) == pytest.approx(3.0)
    assert w2_diag_gaussian(g, DiagonalGaussian([3.0, 4.0], [1.0, 1.0])) == pytest.approx(5.0)


def test_w2_matches_quadrature_per_coordinate():
    p = DiagonalGaussian([0.0, 1.0], [1.0, 0.5])
    q = DiagonalGaussian([3.0, 4.0], [1.0, 1.5])
    quad = math.sqrt(sum(wp_univariate(p.inv_cdf(i), q.inv_cdf(i), 2, 1_000_000) ** 2 for i in range(2)))
    assert w2_diag_gaussian(p, q) == pytest.approx(quad, abs=1e-5)


def test_gaussian_validates():
    with pytest.raises(ValueError):
        DiagonalGaussian([0.0], [0.0])
    with pytest.raises(ValueError):
        DiagonalGaussian([0.0, 1.0], [1.0])
