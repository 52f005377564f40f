"""Learn a tabular distance from sampled targets and track its sup-norm error."""

from bisimlab import random_mdp, random_policy
from bisimlab.learner import train_tabular

mdp = random_mdp(6, 2, seed=21, discount=0.5)
policy = random_policy(mdp, seed=22)
params, history = train_tabular(mdp, policy, steps=5000, step_size=2e-2, seed=0,
                                n_target_samples=16, schedule="linear")
for step in (0, 99, 999, 2499, 4999):
    print(f"step {step + 1:5d}  loss {history.loss[step]:.3e}  sup error {history.sup_error[step]:.3e}")
