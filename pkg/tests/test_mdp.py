import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bisimlab.mdp import (FiniteMDP, GaussianLinearMDP, LinearGaussianPolicy, TabularPolicy,
                          deterministic_policy, duplicate_states, policy_averaged_dynamics, policy_values,
                          random_gaussian_mdp, random_mdp, random_policy, reward_split_mdp, self_loop_mdp,
                          shared_successor_mdp, uniform_policy)
from bisimlab.operators import fixed_point

sizes = st.tuples(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**63))


def test_single_state_single_action():
    mdp = random_mdp(1, 1, (0.0, 0.0), seed=5)
    assert mdp.transition[0, 0, 0] == 1.0
    assert mdp.reward[0, 0] == 0.0


def test_random_mdp_is_deterministic_and_valid():
    a, b = random_mdp(3, 2, (0, 1), seed=7), random_mdp(3, 2, (0, 1), seed=7)
    assert np.array_equal(a.transition, b.transition) and np.array_equal(a.reward, b.reward)
    assert np.max(np.abs(a.transition.sum(-1) - 1)) <= 1e-12
    assert not np.array_equal(a.transition, random_mdp(3, 2, (0, 1), seed=8).transition)


@given(sizes)
def test_random_mdp_invariants(args):
    S, A, seed = args
    mdp = random_mdp(S, A, (-1.0, 2.0), seed=seed)
    assert mdp.transition.shape == (S, A, S)
    assert np.all(mdp.transition >= 0)
    assert np.max(np.abs(mdp.transition.sum(-1) - 1)) <= 1e-12
    assert np.all((mdp.reward >= -1.0) & (mdp.reward <= 2.0))
    pol = random_policy(mdp, seed)
    assert np.max(np.abs(pol.probs.sum(-1) - 1)) <= 1e-12


def test_random_mdp_rejects_bad_arguments():
    with pytest.raises(ValueError):
        random_mdp(0, 2)
    with pytest.raises(ValueError):
        random_mdp(2, 2, (1.0, 0.0))


@pytest.mark.parametrize("P, R, discount", [
    (np.full((2, 1, 2), 0.6), np.zeros((2, 1)), 0.9),
    (np.full((2, 1, 2), 0.5), np.zeros((2, 1)), 1.0),
    (np.full((2, 1, 2), 0.5), np.zeros((2, 1)), -0.1),
    (np.full((2, 1, 2), 0.5), np.array([[np.nan], [0.0]]), 0.5),
    (np.full((2, 1, 2), 0.5), np.zeros((2, 2)), 0.5),
    (np.array([[[1.5, -0.5]], [[0.5, 0.5]]]), np.zeros((2, 1)), 0.5),
])
def test_finite_mdp_validation(P, R, discount):
    with pytest.raises(ValueError):
        FiniteMDP(P, R, discount)


def test_mdp_is_immutable():
    mdp = random_mdp(2, 2, seed=0)
    with pytest.raises(ValueError):
        mdp.transition[0, 0, 0] = 0.3


def test_policy_helpers():
    mdp = random_mdp(3, 1, seed=1)
    assert np.all(random_policy(mdp, 3).probs == 1.0)
    assert np.array_equal(random_policy(random_mdp(3, 2), 4).probs, random_policy(random_mdp(3, 2), 4).probs)
    with pytest.raises(ValueError):
        TabularPolicy([[0.5, 0.4]])
    with pytest.raises(ValueError):
        uniform_policy(random_mdp(2, 3)).check_compatible(random_mdp(2, 2))


def test_policy_averaging_examples():
    mdp = random_mdp(3, 2, seed=2)
    pol = deterministic_policy(mdp, [1, 0, 1])
    r, P = policy_averaged_dynamics(mdp, pol)
    np.testing.assert_array_equal(r, mdp.reward[[0, 1, 2], [1, 0, 1]])
    np.testing.assert_array_equal(P, mdp.transition[[0, 1, 2], [1, 0, 1]])
    split = reward_split_mdp()
    assert policy_averaged_dynamics(split, uniform_policy(split))[0][0] == pytest.approx(0.5)


@given(sizes)
def test_policy_averaging_matches_loops(args):
    S, A, seed = args
    mdp = random_mdp(S, A, seed=seed)
    pol = random_policy(mdp, seed + 1)
    r, P = policy_averaged_dynamics(mdp, pol)
    for s in range(S):
        assert r[s] == pytest.approx(sum(pol.probs[s, a] * mdp.reward[s, a] for a in range(A)), abs=1e-12)
        for t in range(S):
            ref = sum(pol.probs[s, a] * mdp.transition[s, a, t] for a in range(A))
            assert P[s, t] == pytest.approx(ref, abs=1e-12)


def test_policy_values_closed_form():
    mdp = self_loop_mdp((1.0, 0.0), 0.9)
    np.testing.assert_allclose(policy_values(mdp, uniform_policy(mdp)), [10.0, 0.0])


def test_duplicate_one_state():
    base = random_mdp(2, 2, seed=3)
    mdp, pairs = duplicate_states(base, {1: 2})
    assert mdp.n_states == 3
    assert pairs.pairs == ((1, 2),)
    np.testing.assert_array_equal(pairs.origin, [0, 1, 1])
    np.testing.assert_allclose(mdp.transition[:, :, 1] + mdp.transition[:, :, 2],
                               base.transition[pairs.origin][:, :, 1])


def test_duplicate_identity():
    base = random_mdp(3, 2, seed=4)
    mdp, pairs = duplicate_states(base, {0: 1, 2: 1})
    assert len(pairs) == 0
    np.testing.assert_array_equal(mdp.transition, base.transition)
    np.testing.assert_array_equal(mdp.reward, base.reward)


def test_duplicate_counts_all_combinations():
    mdp, pairs = duplicate_states(random_mdp(2, 1, seed=5), {0: 3})
    assert sorted(pairs.pairs) == [(0, 2), (0, 3), (2, 3)]


def test_duplicates_have_zero_pi_distance():
    base = random_mdp(3, 2, seed=6)
    mdp, pairs = duplicate_states(base, {0: 2, 2: 3})
    policy = pairs.lift_policy(random_policy(base, 7))
    d = fixed_point("pi", mdp, policy).metric
    assert max(d[i, j] for i, j in pairs) <= 1e-8


def test_duplicate_validation():
    base = random_mdp(2, 1, seed=0)
    with pytest.raises(ValueError):
        duplicate_states(base, {5: 2})
    with pytest.raises(ValueError):
        duplicate_states(base, {0: 0})


def test_constructions():
    assert shared_successor_mdp().n_states == 4
    assert reward_split_mdp().n_actions == 2
    assert self_loop_mdp().discount == 0.9


def test_gaussian_testbed_validation():
    with pytest.raises(ValueError):
        GaussianLinearMDP(np.eye(2), np.zeros((2, 1)), [1.0, 0.0])
    with pytest.raises(ValueError):
        LinearGaussianPolicy(np.zeros((1, 2)), 0.0, -1.0)


def test_gaussian_testbed_is_coordinate_independent():
    mdp, policy = random_gaussian_mdp(3, 1, seed=9)
    z = np.array([0.3, -0.2, 0.5])
    a = np.array([0.1])
    n = 200_000
    rng = np.random.default_rng(10)
    draws = mdp.step(np.broadcast_to(z, (n, 3)), np.broadcast_to(a, (n, 1)), rng.standard_normal((n, 3)))
    resid = (draws - mdp.next_mean(z, a)) / mdp.next_stddev(z, a)
    cov = np.cov(resid.T)
    off = cov[~np.eye(3, dtype=bool)]
    assert np.max(np.abs(off)) < 5 / np.sqrt(n)
    np.testing.assert_allclose(np.diag(cov), 1.0, atol=0.02)


def test_gaussian_policy_squash():
    pol = LinearGaussianPolicy(np.ones((1, 2)), 0.0, 0.0, squash=True)
    np.testing.assert_allclose(pol.act(np.array([3.0, 4.0]), np.zeros(1)), np.tanh([7.0]))
