"""Learning a distance with the stop-gradient bisimulation loss.

For a batch of states ``B`` and a permutation ``B'`` of it, each pair
``(z, z')`` gets the target ``G(z,a,z',a') + c d(z+, z'+)`` with ``a, a'``
and ``z+, z'+`` drawn from entangled couplings.  The target is computed from
the current parameters but held constant when differentiating, so the loss
gradient only flows through the prediction ``d(z, z')``.

Two parametrisations are provided: a free table over unordered state pairs
(realised distance = square of the raw entry) and, for the Gaussian testbed,
the separable family ``sum_ij w_ij |z_i - z'_i|^j`` with ``w_ij >= 0``.
Optimisation is plain gradient descent with a fixed step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from bisimlab._seeding import derive_seed, make_rng
from bisimlab.estimators import _cdf_table, _draw
from bisimlab.mdp import FiniteMDP, GaussianLinearMDP, LinearGaussianPolicy, TabularPolicy
from bisimlab.operators import SimilarityG, fixed_point
from bisimlab.transport import DiagonalGaussian, wp_univariate


class TrainingDivergence(FloatingPointError):
    """Loss or parameters became non-finite; ``history`` holds the steps completed."""

    def __init__(self, step, history):
        super().__init__(f"training diverged at step {step}")
        self.step = step
        self.history = history


@dataclass
class History:
    loss: list = field(default_factory=list)
    sup_error: list = field(default_factory=list)

    def append(self, loss, sup_error=math.nan):
        self.loss.append(float(loss))
        self.sup_error.append(float(sup_error))

    def __len__(self):
        return len(self.loss)

    def rows(self):
        return [(k + 1, l, e) for k, (l, e) in enumerate(zip(self.loss, self.sup_error))]


# -- tabular ---------------------------------------------------------------------------


@dataclass
class TabularDistanceParams:
    """Distance over ``n`` states stored as one raw value per unordered pair.

    Only the strict upper triangle of ``raw`` is used.  The realised distance
    is ``raw[i, j] ** 2`` mirrored, with an exact zero diagonal.
    """

    raw: np.ndarray

    @classmethod
    def constant(cls, n_states: int, value: float = 1.0) -> "TabularDistanceParams":
        return cls(np.triu(np.full((n_states, n_states), math.sqrt(value)), 1))

    @property
    def n_states(self) -> int:
        return self.raw.shape[0]

    def distance(self) -> np.ndarray:
        up = np.triu(self.raw, 1) ** 2
        return up + up.T


def _tabular_targets(pi_cdf, P_cdf, G, c, dist, z, z2, rng, n_target_samples):
    """Entangled single- or multi-sample targets, one per pair in the batch."""
    B, m = len(z), n_target_samples
    u_a = 1.0 - rng.random((B, m))
    u_s = 1.0 - rng.random((B, m))
    zz = np.repeat(z, m)
    zz2 = np.repeat(z2, m)
    ua, us = u_a.ravel(), u_s.ravel()
    a = _draw(pi_cdf[zz], ua)
    a2 = _draw(pi_cdf[zz2], ua)
    nxt = _draw(P_cdf[zz, a], us)
    nxt2 = _draw(P_cdf[zz2, a2], us)
    draws = G[zz, a, zz2, a2] + c * dist[nxt, nxt2]
    return draws.reshape(B, m).mean(axis=1)


def bisim_loss_batch(params: TabularDistanceParams, mdp: FiniteMDP, policy: TabularPolicy,
                     g: SimilarityG | None, c: float | None, batch, noise_seed: int,
                     n_target_samples: int = 1, targets=None):
    """Mean squared residual over ``batch`` (a sequence of state pairs) and its gradient.

    ``targets`` may be supplied to freeze them (used by gradient checks);
    otherwise they are sampled from ``noise_seed``.  The gradient is taken
    with the targets held fixed.
    """
    pairs = np.asarray(batch, dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("batch must be nonempty")
    c = mdp.discount if c is None else float(c)
    dist = params.distance()
    z, z2 = pairs[:, 0], pairs[:, 1]
    if targets is None:
        G = (g or SimilarityG.reward_diff(mdp)).tensor()
        targets = _tabular_targets(_cdf_table(policy.probs), _cdf_table(mdp.transition), G, c, dist,
                                   z, z2, make_rng(noise_seed), n_target_samples)
    lo, hi = np.minimum(z, z2), np.maximum(z, z2)
    off = lo != hi
    grad = np.zeros_like(params.raw, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported by the caller
        resid = dist[z, z2] - np.asarray(targets, dtype=float)
        loss = float(np.mean(resid**2))
        np.add.at(grad, (lo[off], hi[off]), 2.0 * resid[off] / len(pairs) * 2.0 * params.raw[lo[off], hi[off]])
    return loss, grad


def train_tabular(mdp: FiniteMDP, policy: TabularPolicy, g: SimilarityG | None = None,
                  c: float | None = None, steps: int = 1000, step_size: float = 1e-2,
                  batch_size: int | None = None, seed: int = 0, n_target_samples: int = 1,
                  init: TabularDistanceParams | None = None, reference: np.ndarray | None = None,
                  track_reference: bool = True, schedule: str = "constant"):
    """Fit a tabular distance by gradient descent on the stop-gradient loss.

    Each step draws a batch of ``batch_size`` states (all states, shuffled,
    by default), pairs it with a random permutation of itself, samples
    entangled targets and takes one gradient step.  ``history.sup_error``
    tracks the sup-norm distance to the exact fixed point of the entangled
    upper-bound operator (solved once up front unless ``reference`` is given).

    ``schedule="linear"`` decays the step size linearly to zero over the run,
    which removes most of the stationary noise of the fixed step.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if schedule not in ("constant", "linear"):
        raise ValueError(f"unknown schedule {schedule!r}")
    c = mdp.discount if c is None else float(c)
    n = mdp.n_states
    batch_size = n if batch_size is None else int(batch_size)
    if reference is None and track_reference:
        reference = fixed_point("eps_bar", mdp, policy, tol=1e-12, g=g, c=c).metric
    params = init if init is not None else TabularDistanceParams.constant(n)
    params = TabularDistanceParams(np.array(params.raw, dtype=float))
    G = (g or SimilarityG.reward_diff(mdp)).tensor()
    pi_cdf, P_cdf = _cdf_table(policy.probs), _cdf_table(mdp.transition)
    batch_rng = make_rng(derive_seed(seed, "batches"))
    noise_root = derive_seed(seed, "noise")
    history = History()
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        for step in range(int(steps)):
            states = batch_rng.choice(n, size=batch_size, replace=batch_size > n)
            partners = batch_rng.permutation(states)
            dist = params.distance()
            targets = _tabular_targets(pi_cdf, P_cdf, G, c, dist, states, partners,
                                       make_rng(derive_seed(noise_root, step)), n_target_samples)
            loss, grad = bisim_loss_batch(params, mdp, policy, g, c, np.column_stack([states, partners]),
                                          0, targets=targets)
            eta = step_size * (1.0 - step / steps) if schedule == "linear" else step_size
            params.raw -= eta * grad
            err = math.nan if reference is None else float(np.max(np.abs(params.distance() - reference)))
            history.append(loss, err)
            if not (np.isfinite(loss) and np.all(np.isfinite(params.raw))):
                raise TrainingDivergence(step + 1, history)
    return params, history


# -- separable distances on the Gaussian testbed -------------------------------------------


@dataclass
class SeparableDistanceParams:
    """``d(z, z') = sum_ij weights[i, j] * |z_i - z'_i| ** powers[j]``."""

    weights: np.ndarray
    powers: tuple = (1, 2)

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float)
        self.powers = tuple(float(p) for p in self.powers)
        if self.weights.ndim != 2 or self.weights.shape[1] != len(self.powers):
            raise ValueError("weights must have shape (state_dim, len(powers))")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    @classmethod
    def zeros(cls, state_dim: int, max_power: int = 2) -> "SeparableDistanceParams":
        return cls(np.zeros((state_dim, max_power)), tuple(range(1, max_power + 1)))

    @property
    def max_power(self) -> int:
        return len(self.powers)

    def features(self, z, z2) -> np.ndarray:
        """``|z_i - z'_i| ** j`` for every coordinate and power, shape ``(..., dim, n_powers)``."""
        diff = np.abs(np.asarray(z, dtype=float) - np.asarray(z2, dtype=float))
        return diff[..., None] ** np.asarray(self.powers)

    def distance(self, z, z2) -> np.ndarray:
        return np.sum(self.features(z, z2) * self.weights, axis=(-2, -1))


def gaussian_similarity(testbed: GaussianLinearMDP, policy: LinearGaussianPolicy, variant: str):
    """Vectorised ``G(z, a, z', a')`` on the testbed.

    ``reward_diff``: ``|r(z,a) - r(z',a')|``.  ``policy_mean_diff``: l1
    distance between the policy's (pre-squash) mean actions.
    """
    if variant == "reward_diff":
        return lambda z, a, z2, a2: np.abs(testbed.reward(z, a) - testbed.reward(z2, a2))
    if variant == "policy_mean_diff":
        return lambda z, a, z2, a2: np.abs(policy.mean(z) - policy.mean(z2)).sum(-1)
    raise ValueError(f"unknown similarity variant {variant!r}")


def entangled_gaussian_targets(testbed, policy, G, c, params, z, z2, rng, n_mc):
    """Targets ``mean_k [G + c d(z+_k, z'+_k)]`` with shared action and state noise.

    Returns ``(mean, std_error)`` per pair.
    """
    B, dim = z.shape
    eps_a = rng.standard_normal((B, n_mc, policy.action_dim))
    eps_z = rng.standard_normal((B, n_mc, dim))
    zr = np.broadcast_to(z[:, None, :], (B, n_mc, dim))
    zr2 = np.broadcast_to(z2[:, None, :], (B, n_mc, dim))
    a = policy.act(zr, eps_a)
    a2 = policy.act(zr2, eps_a)
    nxt = testbed.step(zr, a, eps_z)
    nxt2 = testbed.step(zr2, a2, eps_z)
    draws = G(zr, a, zr2, a2) + c * params.distance(nxt, nxt2)
    se = draws.std(axis=1, ddof=1) / math.sqrt(n_mc) if n_mc > 1 else np.zeros(B)
    return draws.mean(axis=1), se


def train_separable_gaussian(testbed: GaussianLinearMDP, policy: LinearGaussianPolicy,
                             g: str = "reward_diff", c: float | None = None, steps: int = 2000,
                             step_size: float = 1e-3, batch_size: int = 64, n_mc: int = 1,
                             seed: int = 0, max_power: int = 2, state_scale: float = 1.0,
                             init: SeparableDistanceParams | None = None, state_sampler=None):
    """Fit separable weights with the stop-gradient loss, projecting onto ``w >= 0``.

    Batch states are drawn from ``N(0, state_scale^2 I)`` unless
    ``state_sampler(rng, batch_size)`` is supplied.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    c = testbed.discount if c is None else float(c)
    G = gaussian_similarity(testbed, policy, g)
    params = init if init is not None else SeparableDistanceParams.zeros(testbed.state_dim, max_power)
    params = SeparableDistanceParams(params.weights.copy(), params.powers)
    rng = make_rng(derive_seed(seed, "batches"))
    noise_root = derive_seed(seed, "noise")
    history = History()
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(int(steps)):
            if state_sampler is None:
                z = state_scale * rng.standard_normal((batch_size, testbed.state_dim))
            else:
                z = np.asarray(state_sampler(rng, batch_size), dtype=float)
            z2 = z[rng.permutation(len(z))]
            targets, _ = entangled_gaussian_targets(testbed, policy, G, c, params, z, z2,
                                                    make_rng(derive_seed(noise_root, step)), n_mc)
            feats = params.features(z, z2)
            resid = np.sum(feats * params.weights, axis=(-2, -1)) - targets
            loss = float(np.mean(resid**2))
            grad = 2.0 * np.einsum("b,bij->ij", resid, feats) / len(z)
            params.weights = np.maximum(params.weights - step_size * grad, 0.0)
            history.append(loss)
            if not (np.isfinite(loss) and np.all(np.isfinite(params.weights))):
                raise TrainingDivergence(step + 1, history)
    return params, history


@dataclass
class TightnessRow:
    pair: int
    monte_carlo: float
    std_error: float
    quadrature: float
    tolerance: float

    @property
    def agrees(self) -> bool:
        return abs(self.monte_carlo - self.quadrature) <= self.tolerance


@dataclass
class TightnessReport:
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.agrees for r in self.rows)

    @property
    def worst_ratio(self) -> float:
        """Largest ``|mc - quad| / tolerance``; below 1 means every pair agrees."""
        return max(abs(r.monte_carlo - r.quadrature) / r.tolerance for r in self.rows)


def coordinatewise_transport_cost(params: SeparableDistanceParams, p: DiagonalGaussian,
                                  q: DiagonalGaussian, n_quad: int = 1_000_000) -> float:
    """``sum_ij w_ij W_j(p_i, q_i)^j`` with each univariate W_j from inverse-CDF quadrature."""
    total = 0.0
    for i in range(p.dim):
        for j, power in enumerate(params.powers):
            w = params.weights[i, j]
            if w == 0.0:
                continue
            total += w * wp_univariate(p.inv_cdf(i), q.inv_cdf(i), power, n_quad) ** power
    return total


def verify_tightness(testbed: GaussianLinearMDP, params: SeparableDistanceParams, pairs,
                     n_mc: int = 100_000, n_quad: int = 1_000_000, seed: int = 0,
                     policy: LinearGaussianPolicy | None = None, quad_tol: float = 1e-5,
                     n_sigma: float = 3.0) -> TightnessReport:
    """Compare the entangled Monte-Carlo mean of ``d(z+, z'+)`` with the optimal transport cost.

    For each pair of states an action pair is drawn from the entangled policy
    coupling (or the zero action when ``policy`` is None); the two next-state
    Gaussians are then coupled by shared noise and the mean distance compared
    with the coordinate-wise quadrature value.
    """
    if any(p < 1 for p in params.powers):
        raise ValueError("tightness needs convex per-coordinate terms (powers >= 1)")
    rows = []
    for k, (z, z2) in enumerate(pairs):
        z, z2 = np.asarray(z, dtype=float), np.asarray(z2, dtype=float)
        rng = make_rng(derive_seed(seed, f"tightness/{k}"))
        if policy is None:
            a = a2 = np.zeros(testbed.action_dim)
        else:
            eps_a = rng.standard_normal(policy.action_dim)
            a, a2 = policy.act(z, eps_a), policy.act(z2, eps_a)
        p = DiagonalGaussian(testbed.next_mean(z, a), testbed.next_stddev(z, a))
        q = DiagonalGaussian(testbed.next_mean(z2, a2), testbed.next_stddev(z2, a2))
        eps = rng.standard_normal((int(n_mc), testbed.state_dim))
        draws = params.distance(p.mean + eps * p.stddev, q.mean + eps * q.stddev)
        se = float(draws.std(ddof=1) / math.sqrt(len(draws)))
        quad = coordinatewise_transport_cost(params, p, q, n_quad)
        rows.append(TightnessRow(k, float(draws.mean()), se, quad, n_sigma * se + quad_tol))
    return TightnessReport(rows)
