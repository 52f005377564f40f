"""One-sample targets for the entangled operator.

Shared-noise draws average to the exact operator value.  Independent draws
average to a different coupling cost, so their error is systematic and can
go either way.
"""

from bisimlab import fixed_point, random_mdp, random_policy
from bisimlab.estimators import bias_audit
from bisimlab.operators import SimilarityG

mdp = random_mdp(5, 3, seed=8, discount=0.9)
policy = random_policy(mdp, seed=9)
g = SimilarityG.reward_diff(mdp)
d = fixed_point("eps_bar", mdp, policy, g=g).metric
pairs = [(0, 1), (1, 3), (2, 4)]

for mode in ("entangled", "independent"):
    for r in bias_audit("eps", mdp, policy, d, pairs, 20_000, seed=0, g=g, mode=mode):
        print(f"{mode:12s} pair {r.pair}: mean {r.mean:.4f}  exact {r.exact_reference:.4f}  "
              f"bias/stderr {r.bias / r.std_error:+.2f}")
