"""Wasserstein distances: exact discrete W1, univariate W_p, diagonal-Gaussian W2."""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Callable

import numpy as np
from scipy.special import ndtri

# POT eagerly imports every array backend it can find; only numpy is needed here.
for _backend in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")

from ot.lp.emd_wrap import check_result, emd_c  # noqa: E402

WEIGHT_TOL = 1e-12
QUANTILE_CLAMP = 1e-12
BRUTEFORCE_MAX_CELLS = 16


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability weights over atoms ``0..n-1``."""

    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", as_weights(self.weights))

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class DiagonalGaussian:
    """Product of independent univariate normals."""

    mean: np.ndarray
    stddev: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.stddev, dtype=float))
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and stddev must be vectors of equal length")
        if np.any(~(std > 0)):
            raise ValueError("stddev must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "stddev", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def inv_cdf(self, coord: int = 0) -> Callable[[np.ndarray], np.ndarray]:
        mu, sigma = self.mean[coord], self.stddev[coord]
        return lambda u: mu + sigma * ndtri(u)


def as_weights(p) -> np.ndarray:
    if isinstance(p, DiscreteDistribution):
        return p.weights
    w = np.asarray(p, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("a discrete distribution must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return w


def _check_cost(p: np.ndarray, q: np.ndarray, cost) -> np.ndarray:
    M = np.asarray(cost, dtype=float)
    if M.shape != (p.size, q.size):
        raise ValueError(f"cost shape {M.shape} does not match ({p.size}, {q.size})")
    if not np.all(np.isfinite(M)):
        raise ValueError("cost must be finite")
    if np.any(M < 0):
        raise ValueError("cost must be nonnegative")
    return M


def optimal_coupling(p, q, cost) -> np.ndarray:
    """Exact optimal transport plan (network simplex)."""
    a, b = as_weights(p), as_weights(q)
    M = _check_cost(a, b, cost)
    a = a / a.sum()
    b = b / b.sum()
    plan, _, _, _, status = emd_c(a, b, np.ascontiguousarray(M), 100000, 1)
    check_result(status)
    return plan


def w1_discrete(p, q, cost) -> float:
    """W1 between two discrete distributions under ground cost ``cost[i, j]``.

    Solved exactly as a transport linear program; no regularisation.
    """
    M = np.asarray(cost, dtype=float)
    plan = optimal_coupling(p, q, M)
    return max(float(np.sum(plan * M)), 0.0)


def w1_unchecked(a: np.ndarray, b: np.ndarray, M: np.ndarray) -> float:
    """:func:`w1_discrete` without input validation, for inner loops.

    ``a`` and ``b`` must already sum to one and ``M`` be C-contiguous float64.
    """
    plan = emd_c(a, b, M, 100000, 1)[0]
    return float(np.sum(plan * M))


@lru_cache(maxsize=None)
def _transport_bases(m: int, n: int):
    """Inverse basis matrices of every basic solution of an m x n transport polytope."""
    cells = [(i, j) for i in range(m) for j in range(n)]
    # row sums, then the first n-1 column sums (the last is implied)
    A = np.zeros((m + n - 1, m * n))
    for k, (i, j) in enumerate(cells):
        A[i, k] = 1.0
        if j < n - 1:
            A[m + j, k] = 1.0
    bases, inverses = [], []
    for subset in combinations(range(m * n), m + n - 1):
        sub = A[:, subset]
        if abs(np.linalg.det(sub)) > 0.5:  # spanning-tree bases have det +-1
            bases.append(subset)
            inverses.append(np.linalg.inv(sub))
    return np.array(bases, dtype=int).reshape(-1, m + n - 1), np.array(inverses)


def w1_discrete_bruteforce(p, q, cost) -> float:
    """Exact W1 by enumerating every vertex of the transport polytope.

    Tractable only for ``len(p) * len(q) <= 16``; used as an oracle.
    """
    a, b = as_weights(p), as_weights(q)
    M = _check_cost(a, b, cost)
    m, n = a.size, b.size
    if m * n > BRUTEFORCE_MAX_CELLS:
        raise ValueError(f"brute force is capped at {BRUTEFORCE_MAX_CELLS} cells, got {m * n}")
    bases, inverses = _transport_bases(m, n)
    rhs = np.concatenate([a, b[:-1]])
    flows = inverses @ rhs
    feasible = np.all(flows >= -1e-12, axis=1)
    costs = np.sum(np.clip(flows, 0.0, None) * M.ravel()[bases], axis=1)
    return float(np.min(costs[feasible]))


def wp_univariate(p_inv_cdf, q_inv_cdf, power: float = 1.0, n_quad: int = 100_000) -> float:
    """``(int_0^1 |F^-1(u) - G^-1(u)|^power du)^(1/power)`` by the midpoint rule.

    The inverse CDFs are called with a vector of ``n_quad`` cell midpoints,
    clamped to ``[1e-12, 1 - 1e-12]`` so unbounded tails stay finite.
    """
    if power < 1:
        raise ValueError(f"power must be >= 1, got {power}")
    n_quad = int(n_quad)
    if n_quad < 1:
        raise ValueError("n_quad must be positive")
    u = (np.arange(n_quad) + 0.5) / n_quad
    u = np.clip(u, QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP)
    diff = np.abs(np.asarray(p_inv_cdf(u), dtype=float) - np.asarray(q_inv_cdf(u), dtype=float))
    if not np.all(np.isfinite(diff)):
        raise FloatingPointError("inverse CDF returned non-finite values inside (0, 1)")
    return float(np.mean(diff**power) ** (1.0 / power))


def w2_diag_gaussian(p: DiagonalGaussian, q: DiagonalGaussian) -> float:
    """Closed-form W2 (Euclidean ground cost) between diagonal Gaussians."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    return float(np.sqrt(np.sum((p.mean - q.mean) ** 2 + (p.stddev - q.stddev) ** 2)))


def product_coupling_cost(p, q, cost) -> float:
    """Expected cost when the two distributions are sampled independently."""
    a, b = as_weights(p), as_weights(q)
    return float(a @ _check_cost(a, b, cost) @ b)
