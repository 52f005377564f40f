"""Bisimulation metrics on finite MDPs with entangled (shared-noise) couplings.

Submodules: ``mdp`` (models, generators), ``transport`` (exact W1 and
quantile-based Wp), ``coupling`` (entangled and independent samplers),
``operators`` (bisimulation operators and fixed points), ``estimators``
(Monte-Carlo targets and bias audits), ``learner`` (stop-gradient training),
``verification`` (property suite) and ``cli``.
"""

from bisimlab.mdp import (BisimilarPairSet, FiniteMDP, GaussianLinearMDP, LinearGaussianPolicy,
                          TabularPolicy, duplicate_states, random_mdp, random_policy, uniform_policy)
from bisimlab.operators import ConvergenceError, SimilarityG, fixed_point, make_operator
from bisimlab.transport import w1_discrete

__all__ = [
    "BisimilarPairSet", "ConvergenceError", "FiniteMDP", "GaussianLinearMDP", "LinearGaussianPolicy",
    "SimilarityG", "TabularPolicy", "duplicate_states", "fixed_point", "make_operator", "random_mdp",
    "random_policy", "uniform_policy", "w1_discrete",
]
__version__ = "0.1.0"
