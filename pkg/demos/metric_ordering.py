"""Solve the three on-policy metrics on a random MDP and compare them.

The exact metric sits below the entangled-action metric, which sits below
the fully entangled upper bound.  All three vanish on duplicated states.
"""

import numpy as np

from bisimlab import duplicate_states, fixed_point, random_mdp, random_policy
from bisimlab.operators import SimilarityG

base = random_mdp(4, 2, seed=3, discount=0.8)
mdp, pairs = duplicate_states(base, {0: 2, 2: 2})
policy = pairs.lift_policy(random_policy(base, seed=4))
g = SimilarityG.reward_diff(mdp)

metrics = {}
for kind in ("pi", "eps", "eps_bar"):
    res = fixed_point(kind, mdp, policy, g=g if kind != "pi" else None)
    metrics[kind] = res.metric
    print(f"{kind:8s} {res.iterations:4d} iterations, max distance {res.metric.max():.4f}")

print("eps - pi     min:", np.min(metrics["eps"] - metrics["pi"]))
print("eps_bar - eps min:", np.min(metrics["eps_bar"] - metrics["eps"]))
for i, j in pairs.pairs:
    print(f"duplicate pair ({i}, {j}):", [float(metrics[k][i, j]) for k in metrics])
