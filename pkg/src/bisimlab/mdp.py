"""Finite and Gaussian-linear MDPs, tabular policies and generators.

Finite MDPs store ``transition[s, a, s']`` and ``reward[s, a]``.  The
``discount`` field doubles as the constant ``c`` of every bisimulation
operator in :mod:`bisimlab.operators` unless a caller overrides it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from bisimlab._seeding import make_rng

ROW_TOL = 1e-12
ROW_FLOOR = 1e-6


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True, order="C")
    arr.setflags(write=False)
    return arr


def _check_rows(probs: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise ValueError(f"{what} must be finite and nonnegative")
    err = np.max(np.abs(probs.sum(axis=-1) - 1.0))
    if err > ROW_TOL:
        raise ValueError(f"{what} rows must sum to 1 (max deviation {err:.3e})")


@dataclass(frozen=True)
class FiniteMDP:
    """Tabular MDP with state-action rewards.

    Attributes
    ----------
    transition : ndarray, shape (n_states, n_actions, n_states)
    reward : ndarray, shape (n_states, n_actions)
    discount : float in [0, 1)
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float = 0.9

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ValueError(f"reward shape {R.shape} does not match transition {P.shape[:2]}")
        _check_rows(P, "transition")
        if not np.all(np.isfinite(R)):
            raise ValueError("reward values must be finite")
        if not 0.0 <= float(self.discount) < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_discount(self, discount: float) -> "FiniteMDP":
        return FiniteMDP(self.transition, self.reward, discount)


@dataclass(frozen=True)
class TabularPolicy:
    """Action probabilities ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2 or probs.shape[1] < 1:
            raise ValueError(f"policy must have shape (S, A), got {probs.shape}")
        _check_rows(probs, "policy")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def check_compatible(self, mdp: FiniteMDP) -> None:
        if self.probs.shape != (mdp.n_states, mdp.n_actions):
            raise ValueError(
                f"policy shape {self.probs.shape} does not match MDP "
                f"({mdp.n_states}, {mdp.n_actions})"
            )


@dataclass(frozen=True)
class BisimilarPairSet:
    """Ground-truth equivalent pairs produced by :func:`duplicate_states`.

    ``origin[s]`` is the index of the original state that ``s`` copies.
    """

    pairs: tuple
    origin: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(i), int(j)) for i, j in self.pairs))
        object.__setattr__(self, "origin", _frozen(self.origin, dtype=int))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def lift_policy(self, policy: TabularPolicy) -> TabularPolicy:
        """Give every copy the action distribution of its original state."""
        return TabularPolicy(policy.probs[self.origin])


def _random_rows(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    # uniform(floor, 1] draws, normalised
    raw = ROW_FLOOR + (1.0 - ROW_FLOOR) * (1.0 - rng.random(shape))
    return raw / raw.sum(axis=-1, keepdims=True)


def random_mdp(
    n_states: int,
    n_actions: int,
    reward_range: Sequence[float] = (0.0, 1.0),
    seed: int = 0,
    discount: float = 0.9,
) -> FiniteMDP:
    """Draw a full-support random MDP.

    Transition rows normalise independent uniform(1e-6, 1] draws; rewards are
    uniform on ``reward_range`` (a point interval gives constant rewards).
    """
    if int(n_states) != n_states or n_states < 1:
        raise ValueError(f"n_states must be a positive integer, got {n_states}")
    if int(n_actions) != n_actions or n_actions < 1:
        raise ValueError(f"n_actions must be a positive integer, got {n_actions}")
    lo, hi = (float(v) for v in reward_range)
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise ValueError(f"reward_range must be a finite interval with lo <= hi, got {reward_range}")
    rng = make_rng(seed)
    P = _random_rows(rng, (n_states, n_actions, n_states))
    R = lo + (hi - lo) * rng.random((n_states, n_actions))
    return FiniteMDP(P, R, discount)


def random_policy(mdp: FiniteMDP, seed: int = 0) -> TabularPolicy:
    rng = make_rng(seed)
    return TabularPolicy(_random_rows(rng, (mdp.n_states, mdp.n_actions)))


def uniform_policy(mdp: FiniteMDP) -> TabularPolicy:
    return TabularPolicy(np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions))


def deterministic_policy(mdp: FiniteMDP, actions: Sequence[int]) -> TabularPolicy:
    actions = np.asarray(actions, dtype=int)
    if actions.shape != (mdp.n_states,):
        raise ValueError("need one action per state")
    if np.any((actions < 0) | (actions >= mdp.n_actions)):
        raise ValueError("action index out of range")
    probs = np.zeros((mdp.n_states, mdp.n_actions))
    probs[np.arange(mdp.n_states), actions] = 1.0
    return TabularPolicy(probs)


def duplicate_states(mdp: FiniteMDP, copies: Mapping[int, int]) -> tuple[FiniteMDP, BisimilarPairSet]:
    """Replicate states to build an MDP with known bisimilar pairs.

    ``copies[s] = k`` makes state ``s`` appear ``k`` times in total (``k = 1``
    leaves it alone).  Original states keep their indices and the extra copies
    are appended in ascending order of ``s``.  Each copy has the reward and
    transition rows of its original; probability mass flowing into a
    replicated state is split uniformly among its copies.
    """
    counts = np.ones(mdp.n_states, dtype=int)
    for s, k in copies.items():
        if not 0 <= int(s) < mdp.n_states:
            raise ValueError(f"state {s} out of range")
        if int(k) != k or k < 1:
            raise ValueError(f"copy count for state {s} must be a positive integer, got {k}")
        counts[int(s)] = int(k)

    origin = list(range(mdp.n_states))
    for s in range(mdp.n_states):
        origin.extend([s] * (counts[s] - 1))
    origin = np.array(origin, dtype=int)

    P = mdp.transition[origin][:, :, origin] / counts[origin][None, None, :]
    R = mdp.reward[origin]
    pairs = []
    for s in range(mdp.n_states):
        members = np.flatnonzero(origin == s)
        pairs.extend(combinations(members.tolist(), 2))
    return FiniteMDP(P, R, mdp.discount), BisimilarPairSet(sorted(pairs), origin)


def policy_averaged_dynamics(mdp: FiniteMDP, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(R_pi[s], P_pi[s, s'])`` averaged over the policy's actions."""
    policy.check_compatible(mdp)
    avg_reward = np.einsum("sa,sa->s", policy.probs, mdp.reward)
    avg_transition = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    return avg_reward, avg_transition


def policy_values(mdp: FiniteMDP, policy: TabularPolicy, discount: float | None = None) -> np.ndarray:
    """State values of ``policy`` by solving the Bellman linear system."""
    gamma = mdp.discount if discount is None else float(discount)
    r, P = policy_averaged_dynamics(mdp, policy)
    return np.linalg.solve(np.eye(mdp.n_states) - gamma * P, r)


# -- hand-built constructions used throughout the tests and demos -----------------


def self_loop_mdp(rewards: Sequence[float] = (1.0, 0.0), discount: float = 0.9) -> FiniteMDP:
    """One action, every state loops onto itself.

    The bisimulation distance between states i and j is
    ``|r_i - r_j| / (1 - discount)``.
    """
    n = len(rewards)
    P = np.eye(n)[:, None, :]
    return FiniteMDP(P, np.asarray(rewards, dtype=float)[:, None], discount)


def reward_split_mdp(rewards: Sequence[float] = (0.0, 1.0), discount: float = 0.0) -> FiniteMDP:
    """A single self-looping state whose actions differ only in reward."""
    k = len(rewards)
    P = np.ones((1, k, 1))
    return FiniteMDP(P, np.asarray(rewards, dtype=float)[None, :], discount)


def shared_successor_mdp(discount: float = 0.9) -> FiniteMDP:
    """States 0 and 1 both move to states 2 or 3 with probability 1/2.

    States 2 and 3 are absorbing with rewards 0 and 1, so they end up far
    apart while 0 and 1 are bisimilar.
    """
    P = np.zeros((4, 1, 4))
    P[0, 0, 2:] = P[1, 0, 2:] = 0.5
    P[2, 0, 2] = P[3, 0, 3] = 1.0
    R = np.array([[0.0], [0.0], [0.0], [1.0]])
    return FiniteMDP(P, R, discount)


# -- continuous testbed -----------------------------------------------------------


@dataclass(frozen=True)
class GaussianLinearMDP:
    """Linear-Gaussian dynamics with a coordinate-wise noise scale.

    Next state::

        z+ = A z + B a + offset + sigma(z, a) * eps,   eps ~ N(0, I)
        sigma(z, a) = stddev + |S z + T a|             (elementwise)

    Reward ``r(z, a) = reward_state . z + reward_action . a + reward_offset``.
    Because ``sigma`` is a vector the next-state law is a product of
    univariate Gaussians.
    """

    transition_matrix: np.ndarray
    action_matrix: np.ndarray
    stddev: np.ndarray
    offset: np.ndarray | None = None
    stddev_state: np.ndarray | None = None
    stddev_action: np.ndarray | None = None
    reward_state: np.ndarray | None = None
    reward_action: np.ndarray | None = None
    reward_offset: float = 0.0
    discount: float = 0.9

    def __post_init__(self):
        A = _frozen(np.atleast_2d(self.transition_matrix))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("transition_matrix must be square")
        B = _frozen(np.reshape(self.action_matrix, (n, -1)))
        k = B.shape[1]
        std = _frozen(np.broadcast_to(np.asarray(self.stddev, dtype=float), (n,)))
        if np.any(std <= 0) or not np.all(np.isfinite(std)):
            raise ValueError("stddev must be strictly positive")

        def vec(x, shape):
            return _frozen(np.zeros(shape) if x is None else np.reshape(x, shape))

        object.__setattr__(self, "transition_matrix", A)
        object.__setattr__(self, "action_matrix", B)
        object.__setattr__(self, "stddev", std)
        object.__setattr__(self, "offset", vec(self.offset, (n,)))
        object.__setattr__(self, "stddev_state", vec(self.stddev_state, (n, n)))
        object.__setattr__(self, "stddev_action", vec(self.stddev_action, (n, k)))
        object.__setattr__(self, "reward_state", vec(self.reward_state, (n,)))
        object.__setattr__(self, "reward_action", vec(self.reward_action, (k,)))
        if not 0.0 <= float(self.discount) < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def state_dim(self) -> int:
        return self.transition_matrix.shape[0]

    @property
    def action_dim(self) -> int:
        return self.action_matrix.shape[1]

    def next_mean(self, z, a):
        return z @ self.transition_matrix.T + a @ self.action_matrix.T + self.offset

    def next_stddev(self, z, a):
        return self.stddev + np.abs(z @ self.stddev_state.T + a @ self.stddev_action.T)

    def reward(self, z, a):
        return z @ self.reward_state + a @ self.reward_action + self.reward_offset

    def step(self, z, a, noise):
        """Reparametrised next state for (batched) ``z``, ``a`` and standard-normal ``noise``."""
        return self.next_mean(z, a) + self.next_stddev(z, a) * noise


@dataclass(frozen=True)
class LinearGaussianPolicy:
    """``a = mean(z) + stddev * eps``, optionally tanh-squashed.

    ``mean(z) = weight @ z + bias``.  A zero ``stddev`` gives a deterministic
    policy.
    """

    weight: np.ndarray
    bias: np.ndarray
    stddev: np.ndarray
    squash: bool = False

    def __post_init__(self):
        W = _frozen(np.atleast_2d(self.weight))
        k = W.shape[0]
        object.__setattr__(self, "weight", W)
        object.__setattr__(self, "bias", _frozen(np.broadcast_to(self.bias, (k,))))
        std = _frozen(np.broadcast_to(np.asarray(self.stddev, dtype=float), (k,)))
        if np.any(std < 0):
            raise ValueError("policy stddev must be nonnegative")
        object.__setattr__(self, "stddev", std)

    @property
    def action_dim(self) -> int:
        return self.weight.shape[0]

    def mean(self, z):
        return z @ self.weight.T + self.bias

    def act(self, z, noise):
        pre = self.mean(z) + self.stddev * noise
        return np.tanh(pre) if self.squash else pre


def random_gaussian_mdp(
    state_dim: int,
    action_dim: int = 1,
    seed: int = 0,
    discount: float = 0.5,
    state_dependent_noise: bool = True,
) -> tuple[GaussianLinearMDP, LinearGaussianPolicy]:
    """Random stable testbed and policy (spectral radius of the dynamics < 1)."""
    rng = make_rng(seed)
    A = rng.normal(size=(state_dim, state_dim))
    A *= 0.8 / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    B = rng.normal(scale=0.5, size=(state_dim, action_dim))
    std = rng.uniform(0.2, 1.0, size=state_dim)
    S = rng.normal(scale=0.3, size=(state_dim, state_dim)) if state_dependent_noise else None
    mdp = GaussianLinearMDP(
        A, B, std, offset=rng.normal(scale=0.1, size=state_dim), stddev_state=S,
        reward_state=rng.normal(size=state_dim), reward_action=rng.normal(size=action_dim),
        discount=discount,
    )
    policy = LinearGaussianPolicy(
        rng.normal(scale=0.5, size=(action_dim, state_dim)),
        rng.normal(scale=0.1, size=action_dim),
        rng.uniform(0.1, 0.5, size=action_dim),
    )
    return mdp, policy
