"""Exact bisimulation operators on finite MDPs and their fixed points.

Five operators map a state metric ``d`` (an ``(S, S)`` array) to a new one:

``pi``
    ``|R(z,pi) - R(z',pi)| + c W1(P(.|z,pi), P(.|z',pi); d)``.
``eps``
    expectation over the entangled action coupling of
    ``G(z,a,z',a') + c W1(P(.|z,a), P(.|z',a'); d)``.
``eps_bar``
    as ``eps`` but the W1 term is replaced by the expectation of ``d`` under
    the entangled coupling of the two transition rows.  Linear in ``d``.
``dbc``
    independent action sampling, reward difference plus W1 per action pair
    (tabular stand-in for the Gaussian-W2 relaxation).
``psm``
    l1 distance between mean actions plus ``d`` averaged over independently
    sampled actions and next states.

Entangled expectations are computed exactly by enumerating the CDF
breakpoints of the shared-uniform coupling (ascending atom order), so every
result here is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from bisimlab.coupling import entangled_segments
from bisimlab.mdp import FiniteMDP, TabularPolicy, policy_averaged_dynamics
from bisimlab.transport import DiagonalGaussian, w1_unchecked, w2_diag_gaussian

KINDS = ("pi", "eps", "eps_bar", "dbc", "psm")
METRIC_TOL = 1e-8


class ConvergenceError(RuntimeError):
    """Raised when :func:`fixed_point` exhausts ``max_iter``.

    The last iterate is available as ``error.result``.
    """

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


# -- state-action similarity -------------------------------------------------------


@dataclass(frozen=True)
class SimilarityG:
    """State-action similarity metric ``G(z, a, z', a')``.

    ``reward_diff`` uses ``table = reward[s, a]`` and returns
    ``|R(z,a) - R(z',a')|``.  ``policy_mean_diff`` uses
    ``table = mean_action[s, k]`` (policy-weighted action embeddings) and
    returns the l1 distance between the rows of ``z`` and ``z'`` whatever the
    actions are.
    """

    variant: Literal["reward_diff", "policy_mean_diff"]
    table: np.ndarray
    n_actions: int

    def __post_init__(self):
        if self.variant not in ("reward_diff", "policy_mean_diff"):
            raise ValueError(f"unknown similarity variant {self.variant!r}")
        table = np.array(self.table, dtype=float)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @classmethod
    def reward_diff(cls, mdp: FiniteMDP) -> "SimilarityG":
        return cls("reward_diff", mdp.reward, mdp.n_actions)

    @classmethod
    def policy_mean_diff(cls, policy: TabularPolicy, embeddings=None) -> "SimilarityG":
        """Mean action per state; actions embed as one-hot vectors by default."""
        emb = np.eye(policy.n_actions) if embeddings is None else np.asarray(embeddings, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        if emb.shape[0] != policy.n_actions:
            raise ValueError("need one embedding row per action")
        return cls("policy_mean_diff", policy.probs @ emb, policy.n_actions)

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    def tensor(self) -> np.ndarray:
        """All values as an array indexed ``[z, a, z', a']``."""
        S, A = self.n_states, self.n_actions
        if self.variant == "reward_diff":
            R = self.table
            return np.abs(R[:, :, None, None] - R[None, None, :, :])
        m = self.table
        dist = np.abs(m[:, None, :] - m[None, :, :]).sum(-1)
        return np.broadcast_to(dist[:, None, :, None], (S, A, S, A)).copy()


def eval_G(g: SimilarityG, z: int, a: int, z2: int, a2: int) -> float:
    S, A = g.n_states, g.n_actions
    for s in (z, z2):
        if not 0 <= s < S:
            raise IndexError(f"state {s} out of range")
    for act in (a, a2):
        if not 0 <= act < A:
            raise IndexError(f"action {act} out of range")
    if g.variant == "reward_diff":
        return float(abs(g.table[z, a] - g.table[z2, a2]))
    return float(np.abs(g.table[z] - g.table[z2]).sum())


# -- metric checks -------------------------------------------------------------------


def metric_violations(d: np.ndarray) -> dict:
    """Worst violation of each pseudometric axiom (0 or negative means satisfied).

    ``triangle`` is ``max d[i,k] - d[i,j] - d[j,k]`` over all triples.
    """
    d = np.asarray(d, dtype=float)
    tri = d[:, None, :] - d[:, :, None] - d[None, :, :]
    return {
        "negativity": float(max(0.0, -d.min())),
        "asymmetry": float(np.max(np.abs(d - d.T))),
        "diagonal": float(np.max(np.abs(np.diag(d)))),
        "triangle": float(max(0.0, tri.max())),
    }


def is_metric(d: np.ndarray, tol: float = METRIC_TOL) -> bool:
    return all(v <= tol for v in metric_violations(d).values())


def similarity_violations(g: SimilarityG) -> dict:
    """Exhaustive check of the state-action metric axioms."""
    S, A = g.n_states, g.n_actions
    flat = g.tensor().reshape(S * A, S * A)
    tri = flat[:, None, :] - flat[:, :, None] - flat[None, :, :]
    return {
        "negativity": float(max(0.0, -flat.min())),
        "self_similarity": float(np.max(np.abs(np.diag(flat)))),
        "asymmetry": float(np.max(np.abs(flat - flat.T))),
        "triangle": float(max(0.0, tri.max())),
    }


# -- operators ------------------------------------------------------------------------


@dataclass
class BisimOperator:
    """A bisimulation operator with its ``d``-independent parts precomputed.

    Build with :func:`make_operator`; call on a metric to apply it.
    """

    kind: str
    mdp: FiniteMDP
    policy: TabularPolicy
    c: float
    g: SimilarityG | None = None
    transport: object = None
    gaussian_proxy: bool = False
    state_features: np.ndarray | None = None
    action_embeddings: np.ndarray | None = None
    _immediate: np.ndarray = field(init=False, repr=False)
    _pairs: tuple = field(init=False, repr=False)
    _terms: list = field(init=False, repr=False)
    _linear: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.c < 1.0:
            raise ValueError(f"c must lie in [0, 1), got {self.c}")
        self.policy.check_compatible(self.mdp)
        if self.transport is None:
            self.transport = w1_unchecked
        S = self.mdp.n_states
        iu = np.triu_indices(S)
        self._pairs = iu
        getattr(self, f"_prepare_{self.kind}")()

    # Each _prepare_* fills ``_immediate`` (the d-free term, (S, S)) and either
    # ``_linear`` (matrix acting on d.ravel()) or ``_terms``: per unordered pair,
    # a list of (weight, p_row, q_row) whose W1 is needed.

    def _prepare_pi(self):
        r, P = policy_averaged_dynamics(self.mdp, self.policy)
        P = np.ascontiguousarray(P)
        self._immediate = np.abs(r[:, None] - r[None, :])
        self._terms = [[(1.0, P[i], P[j])] if i != j else [] for i, j in zip(*self._pairs)]

    def _action_segments(self, i, j):
        return entangled_segments(self.policy.probs[i], self.policy.probs[j])

    def _prepare_eps(self):
        G = self._similarity().tensor()
        S = self.mdp.n_states
        P = self.mdp.transition
        self._immediate = np.zeros((S, S))
        self._terms = []
        for i, j in zip(*self._pairs):
            a, b, w = self._action_segments(i, j)
            self._immediate[i, j] = self._immediate[j, i] = np.dot(w, G[i, a, j, b])
            self._terms.append([
                (wk, P[i, ak], P[j, bk]) for ak, bk, wk in zip(a, b, w) if (i, ak) != (j, bk)
            ])

    def _prepare_eps_bar(self):
        G = self._similarity().tensor()
        S = self.mdp.n_states
        P = self.mdp.transition
        self._immediate = np.zeros((S, S))
        K = np.zeros((S, S, S * S))
        for i, j in zip(*self._pairs):
            a, b, w = self._action_segments(i, j)
            self._immediate[i, j] = self._immediate[j, i] = np.dot(w, G[i, a, j, b])
            for ak, bk, wk in zip(a, b, w):
                x, y, v = entangled_segments(P[i, ak], P[j, bk])
                np.add.at(K[i, j], x * S + y, wk * v)
        self._linear = K.reshape(S * S, S * S)

    def _prepare_dbc(self):
        S, A = self.mdp.n_states, self.mdp.n_actions
        pi, P, R = self.policy.probs, self.mdp.transition, self.mdp.reward
        absdiff = np.abs(R[:, :, None, None] - R[None, None, :, :])
        self._immediate = np.einsum("ia,iajb,jb->ij", pi, absdiff, pi)
        if self.gaussian_proxy:
            self._immediate = self._immediate + self.c * self._gaussian_w2_term()
            self._terms = None
            return
        self._terms = []
        for i, j in zip(*self._pairs):
            self._terms.append([
                (pi[i, a] * pi[j, b], P[i, a], P[j, b])
                for a in range(A) for b in range(A)
                if pi[i, a] * pi[j, b] > 0 and (i, a) != (j, b)
            ])

    def _gaussian_w2_term(self) -> np.ndarray:
        """Expected W2 between moment-matched diagonal Gaussians of next-state features."""
        if self.state_features is None:
            raise ValueError("gaussian_proxy needs state_features, one row per state")
        X = np.asarray(self.state_features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        S, A = self.mdp.n_states, self.mdp.n_actions
        pi, P = self.policy.probs, self.mdp.transition
        mean = P @ X
        var = P @ X**2 - mean**2
        std = np.sqrt(np.clip(var, 0.0, None)) + 1e-12
        gauss = [[DiagonalGaussian(mean[s, a], std[s, a]) for a in range(A)] for s in range(S)]
        out = np.zeros((S, S))
        for i in range(S):
            for j in range(S):
                out[i, j] = sum(
                    pi[i, a] * pi[j, b] * w2_diag_gaussian(gauss[i][a], gauss[j][b])
                    for a in range(A) for b in range(A)
                )
        return out

    def _prepare_psm(self):
        emb = self.action_embeddings
        g = SimilarityG.policy_mean_diff(self.policy, emb)
        m = g.table
        self._immediate = np.abs(m[:, None, :] - m[None, :, :]).sum(-1)
        _, Ppi = policy_averaged_dynamics(self.mdp, self.policy)
        S = self.mdp.n_states
        # E[d(z+, z'+)] with z+ ~ Ppi[i], z'+ ~ Ppi[j] independent
        self._linear = np.einsum("ix,jy->ijxy", Ppi, Ppi).reshape(S * S, S * S)

    def _similarity(self) -> SimilarityG:
        if self.g is None:
            self.g = SimilarityG.reward_diff(self.mdp)
        S, A = self.mdp.n_states, self.mdp.n_actions
        if self.g.n_states != S or self.g.n_actions != A:
            raise ValueError("similarity does not match the MDP's dimensions")
        return self.g

    def transition_term(self, d: np.ndarray) -> np.ndarray:
        """The ``d``-dependent part before multiplication by ``c``."""
        d = np.asarray(d, dtype=float)
        S = self.mdp.n_states
        if d.shape != (S, S):
            raise ValueError(f"metric shape {d.shape} does not match {S} states")
        if self._linear is not None:
            return (self._linear @ d.ravel()).reshape(S, S)
        out = np.zeros((S, S))
        if self._terms is None:
            return out
        d = np.ascontiguousarray(d)
        # terms pairing a row with itself were dropped: they cost 0 under a zero-diagonal d
        for (i, j), terms in zip(zip(*self._pairs), self._terms):
            val = 0.0
            for w, p, q in terms:
                val += w * self.transport(p, q, d)
            out[i, j] = out[j, i] = val
        return out

    def __call__(self, d: np.ndarray) -> np.ndarray:
        out = self._immediate + self.c * self.transition_term(d)
        return np.triu(out) + np.triu(out, 1).T


@dataclass(frozen=True)
class OperatorKind:
    tag: str
    similarity: SimilarityG | None = None
    c: float | None = None

    def __post_init__(self):
        if self.tag not in KINDS:
            raise ValueError(f"unknown operator kind {self.tag!r}; expected one of {KINDS}")
        if self.c is not None and not 0.0 <= self.c < 1.0:
            raise ValueError(f"c must lie in [0, 1), got {self.c}")


def make_operator(kind, mdp: FiniteMDP, policy: TabularPolicy, g: SimilarityG | None = None,
                  c: float | None = None, **options) -> BisimOperator:
    """Build an operator; ``kind`` is a tag string or :class:`OperatorKind`.

    ``c`` defaults to ``mdp.discount``.
    """
    if isinstance(kind, OperatorKind):
        g = kind.similarity if g is None else g
        c = kind.c if c is None else c
        kind = kind.tag
    c = mdp.discount if c is None else float(c)
    return BisimOperator(kind, mdp, policy, c, g, **options)


def apply_F_pi(mdp, policy, d, c=None, **options):
    return make_operator("pi", mdp, policy, c=c, **options)(d)


def apply_F_eps(mdp, policy, g, c, d, **options):
    return make_operator("eps", mdp, policy, g, c, **options)(d)


def apply_F_eps_bar(mdp, policy, g, c, d):
    return make_operator("eps_bar", mdp, policy, g, c)(d)


def apply_F_dbc_style(mdp, policy, c, d, gaussian_proxy=False, state_features=None, **options):
    return make_operator("dbc", mdp, policy, None, c, gaussian_proxy=gaussian_proxy,
                         state_features=state_features, **options)(d)


def apply_F_psm_style(mdp, policy, c, d, action_embeddings=None):
    return make_operator("psm", mdp, policy, None, c, action_embeddings=action_embeddings)(d)


# -- fixed points ----------------------------------------------------------------------


@dataclass
class FixedPointResult:
    metric: np.ndarray
    iterations: int
    residual: float
    residuals: list
    converged: bool = True

    def __iter__(self):
        # allows ``metric, iterations, residual = fixed_point(...)``
        return iter((self.metric, self.iterations, self.residual))


def fixed_point(kind, mdp: FiniteMDP, policy: TabularPolicy, tol: float = 1e-10,
                max_iter: int = 10_000, g: SimilarityG | None = None, c: float | None = None,
                operator: BisimOperator | None = None, **options) -> FixedPointResult:
    """Iterate an operator from the all-zero metric to its fixed point.

    Stops once the contraction bound ``c / (1 - c) * step <= tol`` holds, so
    the returned metric is within ``tol`` (sup norm) of the true fixed point;
    with ``c = 0`` that happens after one iteration.  ``residuals[k]`` is the
    sup-norm change made by iteration ``k + 1``.
    Raises :class:`ConvergenceError` carrying the last iterate when
    ``max_iter`` is reached first.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be positive")
    F = operator if operator is not None else make_operator(kind, mdp, policy, g, c, **options)
    d = np.zeros((mdp.n_states, mdp.n_states))
    residuals = []
    for it in range(1, int(max_iter) + 1):
        new = F(d)
        res = float(np.max(np.abs(new - d)))
        residuals.append(res)
        d = new
        if F.c * res <= tol * (1.0 - F.c):
            return FixedPointResult(d, it, res, residuals)
    result = FixedPointResult(d, int(max_iter), residuals[-1], residuals, converged=False)
    raise ConvergenceError(
        f"{F.kind} iteration did not reach tol={tol:g} in {max_iter} steps "
        f"(residual {residuals[-1]:.3e})", result)
