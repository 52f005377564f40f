import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bisimlab.mdp import (FiniteMDP, TabularPolicy, deterministic_policy, random_mdp, random_policy,
                          reward_split_mdp, self_loop_mdp, shared_successor_mdp, uniform_policy)
from bisimlab.operators import (ConvergenceError, OperatorKind, SimilarityG, apply_F_dbc_style, apply_F_eps,
                                apply_F_eps_bar, apply_F_pi, apply_F_psm_style, eval_G, fixed_point, is_metric,
                                make_operator, metric_violations, similarity_violations)
from bisimlab.transport import w1_unchecked

import oracles

instances = st.tuples(st.integers(1, 5), st.integers(1, 3), st.integers(0, 2**32),
                      st.floats(0.0, 0.9))


def random_instance(S, A, seed, c=0.5):
    mdp = random_mdp(S, A, seed=seed, discount=c)
    return mdp, random_policy(mdp, seed + 1)


def random_metric(S, seed):
    pts = np.random.default_rng(seed).normal(size=(S, 2))
    return np.linalg.norm(pts[:, None] - pts[None], axis=-1)


# -- similarity ------------------------------------------------------------------


def test_eval_G_examples():
    mdp = FiniteMDP(np.ones((2, 1, 2)) / 2, [[1.0], [0.25]], 0.5)
    g = SimilarityG.reward_diff(mdp)
    assert eval_G(g, 0, 0, 1, 0) == pytest.approx(0.75)
    assert eval_G(g, 1, 0, 1, 0) == 0.0
    with pytest.raises(IndexError):
        eval_G(g, 2, 0, 0, 0)
    with pytest.raises(IndexError):
        eval_G(g, 0, 1, 0, 0)


def test_eval_G_matches_tensor():
    mdp, pol = random_instance(3, 2, 1)
    for g in (SimilarityG.reward_diff(mdp), SimilarityG.policy_mean_diff(pol)):
        T = g.tensor()
        for idx in np.ndindex(T.shape):
            assert eval_G(g, *idx) == pytest.approx(T[idx])


@given(st.integers(0, 2**32))
def test_similarity_axioms_exhaustive(seed):
    mdp, pol = random_instance(4, 3, seed)
    for g in (SimilarityG.reward_diff(mdp), SimilarityG.policy_mean_diff(pol),
              SimilarityG.policy_mean_diff(pol, embeddings=[-1.0, 0.0, 2.0])):
        assert max(similarity_violations(g).values()) <= 1e-12


def test_similarity_validation():
    with pytest.raises(ValueError):
        SimilarityG("cosine", np.zeros((2, 2)), 2)
    pol = uniform_policy(random_mdp(2, 2))
    with pytest.raises(ValueError):
        SimilarityG.policy_mean_diff(pol, embeddings=np.zeros((3, 1)))


def test_metric_violations_detects_each_axiom():
    good = random_metric(4, 0)
    assert is_metric(good)
    bad = good.copy()
    bad[0, 1] += 0.1
    assert metric_violations(bad)["asymmetry"] > 0
    bad = good.copy()
    bad[2, 2] = 0.5
    assert metric_violations(bad)["diagonal"] > 0
    bad = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    assert metric_violations(bad)["triangle"] == pytest.approx(3.0)
    assert metric_violations(-good)["negativity"] > 0


# -- operators against the loop oracles ----------------------------------------------


@given(instances)
def test_pi_operator_matches_oracle(args):
    S, A, seed, c = args
    mdp, pol = random_instance(S, A, seed)
    d = random_metric(S, seed)
    np.testing.assert_allclose(apply_F_pi(mdp, pol, d, c), oracles.F_pi(mdp, pol, d, c), atol=1e-6)


@given(instances)
def test_eps_operator_matches_oracle(args):
    S, A, seed, c = args
    mdp, pol = random_instance(S, A, seed)
    d = random_metric(S, seed)
    g = SimilarityG.reward_diff(mdp)
    np.testing.assert_allclose(apply_F_eps(mdp, pol, g, c, d), oracles.F_eps(mdp, pol, g.tensor(), d, c), atol=1e-6)


@given(instances)
def test_eps_bar_operator_matches_oracle(args):
    S, A, seed, c = args
    mdp, pol = random_instance(S, A, seed)
    d = random_metric(S, seed)
    g = SimilarityG.policy_mean_diff(pol)
    ref = oracles.F_eps(mdp, pol, g.tensor(), d, c, inner="coupling")
    np.testing.assert_allclose(apply_F_eps_bar(mdp, pol, g, c, d), ref, atol=1e-10)


@given(instances)
def test_dbc_and_psm_match_oracles(args):
    S, A, seed, c = args
    mdp, pol = random_instance(S, A, seed)
    d = random_metric(S, seed)
    np.testing.assert_allclose(apply_F_dbc_style(mdp, pol, c, d), oracles.F_dbc(mdp, pol, d, c), atol=1e-6)
    np.testing.assert_allclose(apply_F_psm_style(mdp, pol, c, d), oracles.F_psm(mdp, pol, d, c), atol=1e-10)


# -- examples ----------------------------------------------------------------------


def test_pi_on_zero_metric_is_reward_gap():
    mdp, pol = random_instance(4, 3, 2)
    r = (pol.probs * mdp.reward).sum(1)
    np.testing.assert_allclose(apply_F_pi(mdp, pol, np.zeros((4, 4))), np.abs(r[:, None] - r[None]), atol=1e-15)


@pytest.mark.parametrize("kind", ["pi", "eps", "eps_bar"])
def test_self_loop_closed_form(kind):
    mdp = self_loop_mdp((1.0, 0.0), 0.9)
    d = fixed_point(kind, mdp, uniform_policy(mdp), tol=1e-10).metric
    assert d[0, 1] == pytest.approx(10.0, abs=1e-8)


@pytest.mark.parametrize("kind", ["eps", "eps_bar"])
def test_entangled_diagonal_is_zero(kind):
    mdp, pol = random_instance(4, 3, 3)
    d = random_metric(4, 3)
    out = make_operator(kind, mdp, pol)(d)
    assert np.all(np.diag(out) == 0.0)


def test_single_action_eps_equals_pi():
    mdp, pol = random_instance(5, 1, 4)
    d = random_metric(5, 4)
    np.testing.assert_allclose(apply_F_eps(mdp, pol, SimilarityG.reward_diff(mdp), None, d),
                               apply_F_pi(mdp, pol, d), atol=1e-12)


def test_deterministic_transitions_make_eps_bar_equal_eps():
    rng = np.random.default_rng(5)
    S, A = 4, 2
    P = np.zeros((S, A, S))
    P[np.arange(S)[:, None], np.arange(A)[None, :], rng.integers(0, S, size=(S, A))] = 1.0
    mdp = FiniteMDP(P, rng.uniform(size=(S, A)), 0.8)
    pol = random_policy(mdp, 6)
    a = fixed_point("eps", mdp, pol).metric
    b = fixed_point("eps_bar", mdp, pol).metric
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_dbc_self_distance_positive():
    split = reward_split_mdp((0.0, 1.0), 0.0)
    pol = uniform_policy(split)
    assert apply_F_dbc_style(split, pol, 0.0, np.zeros((1, 1)))[0, 0] == pytest.approx(0.5)
    assert fixed_point("dbc", split, pol).metric[0, 0] == pytest.approx(0.5)


def test_dbc_with_deterministic_policy_matches_pi():
    mdp = random_mdp(4, 3, seed=7)
    pol = deterministic_policy(mdp, [0, 2, 1, 1])
    d = random_metric(4, 7)
    np.testing.assert_allclose(apply_F_dbc_style(mdp, pol, 0.9, d), apply_F_pi(mdp, pol, d, 0.9), atol=1e-12)


def test_dbc_gaussian_proxy():
    mdp, pol = random_instance(3, 2, 8)
    with pytest.raises(ValueError):
        apply_F_dbc_style(mdp, pol, 0.5, np.zeros((3, 3)), gaussian_proxy=True)
    feats = np.array([0.0, 1.0, 3.0])
    out = apply_F_dbc_style(mdp, pol, 0.5, np.zeros((3, 3)), gaussian_proxy=True, state_features=feats)
    # moment-matched W2 term between two next-state laws
    P = mdp.transition
    mean, sq = P @ feats, P @ feats**2
    std = np.sqrt(np.maximum(sq - mean**2, 0)) + 1e-12
    i, j = 0, 2
    ref = sum(pol.probs[i, a] * pol.probs[j, b] * (abs(mdp.reward[i, a] - mdp.reward[j, b])
              + 0.5 * np.hypot(mean[i, a] - mean[j, b], std[i, a] - std[j, b]))
              for a in range(2) for b in range(2))
    assert out[i, j] == pytest.approx(ref)


def test_psm_examples():
    shared = shared_successor_mdp(0.9)
    pol = uniform_policy(shared)
    d = np.zeros((4, 4))
    d[2, 3] = d[3, 2] = 1.0
    assert apply_F_psm_style(shared, pol, 0.9, d)[0, 0] == pytest.approx(0.45)
    loop = self_loop_mdp((1.0, 0.0, 0.5))
    assert np.all(np.diag(apply_F_psm_style(loop, uniform_policy(loop), 0.9, random_metric(3, 0))) == 0)
    single = FiniteMDP(np.ones((1, 2, 1)), [[0.0, 1.0]], 0.5)
    assert apply_F_psm_style(single, uniform_policy(single), 0.5, np.zeros((1, 1)))[0, 0] == 0.0


def test_zero_discount_converges_in_one_iteration():
    mdp, pol = random_instance(4, 2, 9, c=0.0)
    res = fixed_point("eps_bar", mdp, pol)
    assert res.iterations == 1
    g = SimilarityG.reward_diff(mdp).tensor()
    np.testing.assert_allclose(res.metric, oracles.F_eps(mdp, pol, g, np.zeros((4, 4)), 0.0, "coupling"),
                               atol=1e-12)


@given(instances)
def test_contraction_of_residuals(args):
    S, A, seed, c = args
    mdp, pol = random_instance(S, A, seed, c=c)
    for kind in ("pi", "eps", "eps_bar", "dbc", "psm"):
        r = np.asarray(fixed_point(kind, mdp, pol, tol=1e-10).residuals)
        assert np.all(r[1:] <= c * r[:-1] + 1e-12)


@given(instances)
def test_ordering_and_axioms(args):
    S, A, seed, c = args
    mdp, pol = random_instance(S, A, seed, c=c)
    d_pi, d_eps, d_bar = (fixed_point(k, mdp, pol, tol=1e-10).metric for k in ("pi", "eps", "eps_bar"))
    assert np.min(d_eps - d_pi) >= -1e-8
    assert np.min(d_bar - d_eps) >= -1e-8
    for d in (d_pi, d_eps, d_bar):
        assert max(metric_violations(d).values()) <= 1e-8


def test_tolerance_controls_distance_to_fixed_point():
    mdp, pol = random_instance(5, 2, 10, c=0.9)
    tight = fixed_point("eps", mdp, pol, tol=1e-12).metric
    for tol in (1e-4, 1e-6, 1e-8):
        assert np.max(np.abs(fixed_point("eps", mdp, pol, tol=tol).metric - tight)) <= tol


def test_fixed_point_is_a_fixed_point():
    mdp, pol = random_instance(5, 3, 11, c=0.7)
    res = fixed_point("eps", mdp, pol, tol=1e-12)
    F = make_operator("eps", mdp, pol)
    assert np.max(np.abs(F(res.metric) - res.metric)) <= 1e-11
    d, iterations, residual = res
    assert iterations == res.iterations and residual == res.residual


def test_convergence_failure_carries_last_iterate():
    mdp, pol = random_instance(3, 2, 12, c=0.9)
    with pytest.raises(ConvergenceError) as info:
        fixed_point("pi", mdp, pol, max_iter=3)
    assert info.value.result.iterations == 3
    assert not info.value.result.converged


def test_injected_transport_is_used():
    mdp, pol = random_instance(3, 2, 13)
    d = random_metric(3, 13)
    honest = make_operator("pi", mdp, pol)(d)
    broken = make_operator("pi", mdp, pol, transport=lambda a, b, M: 2 * w1_unchecked(a, b, M))(d)
    assert np.max(np.abs(broken - honest)) > 1e-3


def test_operator_kind_and_validation():
    mdp, pol = random_instance(3, 2, 14)
    kind = OperatorKind("eps", SimilarityG.reward_diff(mdp), 0.3)
    assert make_operator(kind, mdp, pol).c == 0.3
    with pytest.raises(ValueError):
        OperatorKind("bogus")
    with pytest.raises(ValueError):
        make_operator("pi", mdp, pol, c=1.0)
    with pytest.raises(ValueError):
        make_operator("pi", mdp, pol)(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        make_operator("pi", mdp, TabularPolicy(np.ones((2, 2)) / 2))
