"""Monte-Carlo estimators of bisimulation targets and bias audits.

Each ``sample_F_hat_*`` draws ``n_samples`` i.i.d. single-sample targets for
one state pair from a seeded stream.  :func:`bias_audit` compares their mean
with an exact reference computed by :mod:`bisimlab.operators`.

Reference conventions (``reference="target"``, the default):

* ``eps``: the entangled upper-bound operator ``F_eps_bar(d)``, which the
  entangled estimator is unbiased for.
* ``dbc``: the pi-bisimulation operator ``F_pi(d)``, the quantity the
  independent-sampling relaxation stands in for.
* ``psm``: mean-action distance plus ``c W1(P(.|z,pi), P(.|z',pi); d)``.

``reference="expectation"`` instead uses the exact expectation of the sampler
itself, so the bias should vanish for every method.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from bisimlab._seeding import derive_seed, make_rng
from bisimlab.mdp import FiniteMDP, GaussianLinearMDP, LinearGaussianPolicy, TabularPolicy, policy_averaged_dynamics
from bisimlab.operators import SimilarityG, make_operator
from bisimlab.transport import DiagonalGaussian, w1_discrete, w2_diag_gaussian

METHODS = ("eps", "dbc", "psm")


@dataclass
class EstimatorReport:
    method: str
    mode: str
    pair: tuple
    n_samples: int
    mean: float
    variance: float
    std_error: float
    exact_reference: float
    bias: float
    seed: int

    def as_row(self) -> dict:
        return {
            "method": self.method, "mode": self.mode,
            "z": self.pair[0], "z_prime": self.pair[1],
            "n": self.n_samples, "mean": self.mean, "stderr": self.std_error,
            "exact": self.exact_reference, "bias": self.bias, "seed": self.seed,
        }

    def as_dict(self) -> dict:
        out = asdict(self)
        out["pair"] = list(self.pair)
        return out


def _cdf_table(probs: np.ndarray) -> np.ndarray:
    """Cumulative sums along the last axis, pinned to 1 after the last atom with mass."""
    c = np.cumsum(probs, axis=-1)
    c /= c[..., -1:]
    last = probs.shape[-1] - 1 - np.argmax(probs[..., ::-1] > 0, axis=-1)
    c[np.arange(probs.shape[-1]) >= last[..., None]] = 1.0
    return c


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # smallest index whose cumulative mass reaches u
    return np.sum(cdf_rows < u[:, None], axis=1)


def _uniforms(rng: np.random.Generator, n: int) -> np.ndarray:
    return 1.0 - rng.random(n)  # (0, 1]


def _check_pair(mdp: FiniteMDP, pair) -> tuple:
    z, z2 = (int(s) for s in pair)
    if not (0 <= z < mdp.n_states and 0 <= z2 < mdp.n_states):
        raise ValueError(f"pair {pair} out of range for {mdp.n_states} states")
    return z, z2


def _check_metric(mdp: FiniteMDP, d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape != (mdp.n_states, mdp.n_states) or not np.all(np.isfinite(d)):
        raise ValueError("d must be a finite (S, S) array")
    return d


def sample_F_hat_eps(mdp: FiniteMDP, policy: TabularPolicy, g: SimilarityG | None, c: float | None,
                     d, pair, seed: int, n_samples: int = 1, mode: str = "entangled") -> np.ndarray:
    """Draws of ``G(z,a,z',a') + c d(z+, z'+)``.

    ``mode="entangled"`` shares one uniform between the two action draws and
    another between the two next-state draws; ``"independent"`` uses separate
    uniforms on each side.
    """
    if mode not in ("entangled", "independent"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    policy.check_compatible(mdp)
    z, z2 = _check_pair(mdp, pair)
    d = _check_metric(mdp, d)
    c = mdp.discount if c is None else float(c)
    G = (g or SimilarityG.reward_diff(mdp)).tensor()
    n = int(n_samples)
    rng = make_rng(seed)
    u_a = _uniforms(rng, n)
    u_s = _uniforms(rng, n)
    u_a2 = u_a if mode == "entangled" else _uniforms(rng, n)
    u_s2 = u_s if mode == "entangled" else _uniforms(rng, n)
    pi_cdf = _cdf_table(policy.probs)
    P_cdf = _cdf_table(mdp.transition)
    a = _draw(np.broadcast_to(pi_cdf[z], (n, mdp.n_actions)), u_a)
    a2 = _draw(np.broadcast_to(pi_cdf[z2], (n, mdp.n_actions)), u_a2)
    nxt = _draw(P_cdf[z, a], u_s)
    nxt2 = _draw(P_cdf[z2, a2], u_s2)
    return G[z, a, z2, a2] + c * d[nxt, nxt2]


def sample_F_hat_dbc(mdp, policy, c, d, pair, seed: int, n_samples: int = 1) -> np.ndarray:
    """Draws of the DBC-style target with independently sampled actions.

    On a :class:`FiniteMDP` the transition term is the exact W1 (under ``d``)
    between the sampled actions' next-state rows.  On a
    :class:`GaussianLinearMDP` ``pair`` holds two state vectors, ``policy`` is a
    :class:`LinearGaussianPolicy`, ``d`` is ignored, and the transition term is
    the closed-form W2 between the two next-state Gaussians.
    """
    if isinstance(mdp, GaussianLinearMDP):
        return _sample_dbc_gaussian(mdp, policy, c, pair, seed, n_samples)
    policy.check_compatible(mdp)
    z, z2 = _check_pair(mdp, pair)
    d = _check_metric(mdp, d)
    c = mdp.discount if c is None else float(c)
    A = mdp.n_actions
    P, R = mdp.transition, mdp.reward
    w1 = np.array([[w1_discrete(P[z, a], P[z2, b], d) for b in range(A)] for a in range(A)])
    n = int(n_samples)
    rng = make_rng(seed)
    pi_cdf = _cdf_table(policy.probs)
    a = _draw(np.broadcast_to(pi_cdf[z], (n, A)), _uniforms(rng, n))
    a2 = _draw(np.broadcast_to(pi_cdf[z2], (n, A)), _uniforms(rng, n))
    return np.abs(R[z, a] - R[z2, a2]) + c * w1[a, a2]


def _sample_dbc_gaussian(mdp: GaussianLinearMDP, policy: LinearGaussianPolicy, c, pair, seed, n_samples):
    c = mdp.discount if c is None else float(c)
    z, z2 = (np.asarray(s, dtype=float) for s in pair)
    n = int(n_samples)
    rng = make_rng(seed)
    k = policy.action_dim
    a = policy.act(np.broadcast_to(z, (n, z.size)), rng.standard_normal((n, k)))
    a2 = policy.act(np.broadcast_to(z2, (n, z2.size)), rng.standard_normal((n, k)))
    zz = np.broadcast_to(z, (n, z.size))
    zz2 = np.broadcast_to(z2, (n, z2.size))
    mu, sd = mdp.next_mean(zz, a), mdp.next_stddev(zz, a)
    mu2, sd2 = mdp.next_mean(zz2, a2), mdp.next_stddev(zz2, a2)
    w2 = np.sqrt(np.sum((mu - mu2) ** 2 + (sd - sd2) ** 2, axis=1))
    return np.abs(mdp.reward(zz, a) - mdp.reward(zz2, a2)) + c * w2


def dbc_gaussian_w2(mdp: GaussianLinearMDP, z, a, z2, a2) -> float:
    """Closed-form W2 between the next-state laws of ``(z, a)`` and ``(z2, a2)``."""
    p = DiagonalGaussian(mdp.next_mean(z, a), mdp.next_stddev(z, a))
    q = DiagonalGaussian(mdp.next_mean(z2, a2), mdp.next_stddev(z2, a2))
    return w2_diag_gaussian(p, q)


def sample_F_hat_psm(mdp: FiniteMDP, policy: TabularPolicy, c, d, pair, seed: int,
                     n_samples: int = 1, action_embeddings=None) -> np.ndarray:
    """Exact mean-action distance plus ``c d(z+, z'+)`` from one independent next-state pair."""
    policy.check_compatible(mdp)
    z, z2 = _check_pair(mdp, pair)
    d = _check_metric(mdp, d)
    c = mdp.discount if c is None else float(c)
    means = SimilarityG.policy_mean_diff(policy, action_embeddings).table
    first = float(np.abs(means[z] - means[z2]).sum())
    n = int(n_samples)
    rng = make_rng(seed)
    A = mdp.n_actions
    pi_cdf = _cdf_table(policy.probs)
    P_cdf = _cdf_table(mdp.transition)
    a = _draw(np.broadcast_to(pi_cdf[z], (n, A)), _uniforms(rng, n))
    a2 = _draw(np.broadcast_to(pi_cdf[z2], (n, A)), _uniforms(rng, n))
    nxt = _draw(P_cdf[z, a], _uniforms(rng, n))
    nxt2 = _draw(P_cdf[z2, a2], _uniforms(rng, n))
    return first + c * d[nxt, nxt2]


def psm_target(mdp: FiniteMDP, policy: TabularPolicy, c, d, action_embeddings=None) -> np.ndarray:
    """Mean-action distance plus ``c`` times W1 of the policy-averaged transitions."""
    means = SimilarityG.policy_mean_diff(policy, action_embeddings).table
    F = make_operator("pi", mdp, policy, c=c)
    return np.abs(means[:, None, :] - means[None, :, :]).sum(-1) + F.c * F.transition_term(d)


def independent_eps_expectation(mdp: FiniteMDP, policy: TabularPolicy, g, c, d) -> np.ndarray:
    """Exact mean of :func:`sample_F_hat_eps` in ``"independent"`` mode."""
    c = mdp.discount if c is None else float(c)
    G = (g or SimilarityG.reward_diff(mdp)).tensor()
    pi, P = policy.probs, mdp.transition
    trans = np.einsum("iax,xy,jby->iajb", P, np.asarray(d, dtype=float), P)
    return np.einsum("ia,iajb,jb->ij", pi, G + c * trans, pi)


def exact_reference(method: str, mdp, policy, d, g=None, c=None, mode: str = "entangled",
                    reference: str = "target", action_embeddings=None) -> np.ndarray:
    """Full ``(S, S)`` table of the exact reference used by :func:`bias_audit`."""
    if reference not in ("target", "expectation"):
        raise ValueError(f"unknown reference {reference!r}")
    if method == "eps":
        if reference == "expectation" and mode == "independent":
            return independent_eps_expectation(mdp, policy, g, c, d)
        return make_operator("eps_bar", mdp, policy, g, c)(d)
    if method == "dbc":
        return make_operator("pi" if reference == "target" else "dbc", mdp, policy, c=c)(d)
    if method == "psm":
        if reference == "target":
            return psm_target(mdp, policy, c, d, action_embeddings)
        return make_operator("psm", mdp, policy, c=c, action_embeddings=action_embeddings)(d)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _sampler(method, mdp, policy, d, g, c, mode, action_embeddings):
    if method == "eps":
        return lambda pair, seed, n: sample_F_hat_eps(mdp, policy, g, c, d, pair, seed, n, mode)
    if method == "dbc":
        return lambda pair, seed, n: sample_F_hat_dbc(mdp, policy, c, d, pair, seed, n)
    if method == "psm":
        return lambda pair, seed, n: sample_F_hat_psm(mdp, policy, c, d, pair, seed, n, action_embeddings)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def summarize(samples: np.ndarray) -> tuple[float, float, float]:
    """Mean, unbiased variance and standard error of a 1-D sample."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    mean = float(samples.mean())
    var = float(samples.var(ddof=1)) if n > 1 else 0.0
    return mean, var, float(np.sqrt(var / n))


def bias_audit(method: str, mdp: FiniteMDP, policy: TabularPolicy, d, pairs, n_samples: int,
               seed: int, g: SimilarityG | None = None, c: float | None = None,
               mode: str | None = None, reference: str = "target",
               action_embeddings=None) -> list[EstimatorReport]:
    """One :class:`EstimatorReport` per pair, in the order given.

    Pair ``k`` draws from the stream ``derive_seed(seed, "<method>/<mode>/<k>")``.
    """
    if mode is None:
        mode = "entangled" if method == "eps" else "independent"
    if method != "eps" and mode != "independent":
        raise ValueError(f"{method} only samples independently")
    if int(n_samples) < 1:
        raise ValueError("n_samples must be at least 1")
    exact = exact_reference(method, mdp, policy, d, g, c, mode, reference, action_embeddings)
    draw = _sampler(method, mdp, policy, d, g, c, mode, action_embeddings)
    reports = []
    for k, pair in enumerate(pairs):
        z, z2 = _check_pair(mdp, pair)
        stream = derive_seed(seed, f"{method}/{mode}/{k}")
        mean, var, se = summarize(draw((z, z2), stream, int(n_samples)))
        ref = float(exact[z, z2])
        reports.append(EstimatorReport(method, mode, (z, z2), int(n_samples), mean, var, se, ref, mean - ref, stream))
    return reports
