"""Entangled (shared-noise) and independent couplings.

The entangled coupling pushes one noise draw through the inverse-sampling map
of both distributions.  For diagonal Gaussians the shared noise is standard
normal and the map is ``mean + noise * stddev``; since the normal quantile
function is monotone this is the same joint law as sharing uniforms.

Discrete distributions are inverse-sampled along an atom order, ascending
index unless one is supplied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from bisimlab._seeding import make_rng
from bisimlab.transport import DiagonalGaussian, as_weights


@dataclass(frozen=True)
class NoiseVector:
    """Noise shared between the two sides of a coupling.

    ``values`` may carry leading batch dimensions; the last axis is the
    coordinate axis.
    """

    values: np.ndarray
    law: Literal["uniform", "normal"]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if self.law not in ("uniform", "normal"):
            raise ValueError(f"unknown noise law {self.law!r}")
        if self.law == "uniform" and np.any((vals < 0) | (vals > 1)):
            raise ValueError("uniform noise must lie in [0, 1]")
        object.__setattr__(self, "values", vals)

    @property
    def length(self) -> int:
        return self.values.shape[-1] if self.values.ndim else 1

    @classmethod
    def normal(cls, shape, seed: int) -> "NoiseVector":
        return cls(make_rng(seed).standard_normal(shape), "normal")

    @classmethod
    def uniform(cls, shape, seed: int) -> "NoiseVector":
        return cls(make_rng(seed).random(shape), "uniform")


@dataclass(frozen=True)
class CoupledPair:
    x: np.ndarray
    y: np.ndarray
    noise: NoiseVector | None = None


def _normal_values(noise) -> np.ndarray:
    if isinstance(noise, NoiseVector):
        if noise.law != "normal":
            raise ValueError("Gaussian reparametrisation needs standard-normal noise")
        return noise.values
    return np.asarray(noise, dtype=float)


def entangled_gaussian(p: DiagonalGaussian, q: DiagonalGaussian, noise) -> CoupledPair:
    eps = _normal_values(noise)
    if not (p.dim == q.dim == (eps.shape[-1] if eps.ndim else 1)):
        raise ValueError(f"dimension mismatch: {p.dim}, {q.dim}, noise {eps.shape}")
    x = p.mean + eps * p.stddev
    y = q.mean + eps * q.stddev
    return CoupledPair(x, y, noise if isinstance(noise, NoiseVector) else NoiseVector(eps, "normal"))


def entangled_tanh_policy(mean_a, std_a, mean_b, std_b, noise) -> CoupledPair:
    """Two tanh-squashed Gaussian actions computed from the same noise."""
    mean_a, std_a, mean_b, std_b = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (mean_a, std_a, mean_b, std_b))
    eps = _normal_values(noise)
    dims = {mean_a.shape[-1], std_a.shape[-1], mean_b.shape[-1], std_b.shape[-1], eps.shape[-1] if eps.ndim else 1}
    if len(dims) != 1:
        raise ValueError("policy parameters and noise must share one dimension")
    if np.any(std_a < 0) or np.any(std_b < 0):
        raise ValueError("standard deviations must be nonnegative")
    x = np.tanh(mean_a + eps * std_a)
    y = np.tanh(mean_b + eps * std_b)
    return CoupledPair(x, y, noise if isinstance(noise, NoiseVector) else NoiseVector(eps, "normal"))


def _order(n: int, atom_order) -> np.ndarray:
    if atom_order is None:
        return np.arange(n)
    order = np.asarray(atom_order, dtype=int)
    if sorted(order.tolist()) != list(range(n)):
        raise ValueError("atom_order must be a permutation of the atom indices")
    return order


def _cdf(w: np.ndarray) -> np.ndarray:
    """Cumulative mass, pinned to exactly 1 from the last atom with mass onwards."""
    c = np.cumsum(w)
    c /= c[-1]
    c[np.flatnonzero(w > 0)[-1]:] = 1.0
    return c


def inverse_sample(p, u, atom_order: Sequence[int] | None = None) -> np.ndarray:
    """Smallest atom (in ``atom_order``) whose cumulative mass reaches ``u``."""
    w = as_weights(p)
    order = _order(w.size, atom_order)
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("u must lie in [0, 1]")
    u = np.maximum(u, np.nextafter(0.0, 1.0))  # u = 0 behaves like the limit from above
    return order[np.searchsorted(_cdf(w[order]), u, side="left")]


def entangled_discrete(p, q, u, atom_order: Sequence[int] | None = None) -> CoupledPair:
    """Inverse-sample both distributions with the same uniform(s) ``u``."""
    wp, wq = as_weights(p), as_weights(q)
    if wp.size != wq.size:
        raise ValueError("entangled discrete coupling needs a shared atom set")
    x = inverse_sample(wp, u, atom_order)
    y = inverse_sample(wq, u, atom_order)
    return CoupledPair(x, y, NoiseVector(np.atleast_1d(u), "uniform"))


def entangled_segments(p, q, atom_order: Sequence[int] | None = None):
    """Exact law of the entangled discrete coupling.

    Returns ``(x, y, mass)``: the atom pairs visited as ``u`` sweeps (0, 1] and
    the length of each ``u``-interval.  At most ``len(p) + len(q) - 1`` pairs.
    """
    wp, wq = as_weights(p), as_weights(q)
    if wp.size != wq.size:
        raise ValueError("entangled discrete coupling needs a shared atom set")
    order = _order(wp.size, atom_order)
    cp, cq = _cdf(wp[order]), _cdf(wq[order])
    cuts = np.unique(np.concatenate([[0.0], cp, cq]))
    lo, hi = cuts[:-1], cuts[1:]
    mid = 0.5 * (lo + hi)
    x = order[np.searchsorted(cp, mid, side="left")]
    y = order[np.searchsorted(cq, mid, side="left")]
    return x, y, hi - lo


def independent_pair(p, q, seed: int, size: int | None = None) -> CoupledPair:
    """Sample ``x ~ p`` and ``y ~ q`` from independent noise streams.

    ``p`` and ``q`` are both discrete (weights or :class:`DiscreteDistribution`)
    or both :class:`DiagonalGaussian`.
    """
    rng = make_rng(seed)
    shape = () if size is None else (int(size),)
    if isinstance(p, DiagonalGaussian) or isinstance(q, DiagonalGaussian):
        if not (isinstance(p, DiagonalGaussian) and isinstance(q, DiagonalGaussian)):
            raise TypeError("cannot pair a Gaussian with a discrete distribution")
        e1 = rng.standard_normal(shape + (p.dim,))
        e2 = rng.standard_normal(shape + (q.dim,))
        return CoupledPair(p.mean + e1 * p.stddev, q.mean + e2 * q.stddev)
    u1 = 1.0 - rng.random(shape)  # (0, 1]
    u2 = 1.0 - rng.random(shape)
    return CoupledPair(inverse_sample(p, u1), inverse_sample(q, u2))


def entangled_pair(p, q, seed: int, size: int | None = None) -> CoupledPair:
    """Seeded convenience wrapper around the two entangled samplers."""
    shape = () if size is None else (int(size),)
    if isinstance(p, DiagonalGaussian):
        return entangled_gaussian(p, q, NoiseVector.normal(shape + (p.dim,), seed))
    u = 1.0 - make_rng(seed).random(shape)
    return entangled_discrete(p, q, u)
