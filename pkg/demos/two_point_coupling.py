"""Two copies of the same fair coin over {0, D}.

The optimal coupling moves no mass, so W1 is zero.  Drawing the two coins
independently pays D/2 on average; drawing them from shared noise pays
nothing on every draw.
"""

import numpy as np

from bisimlab.coupling import entangled_pair, independent_pair
from bisimlab.transport import w1_discrete

D = 1.0
p = np.array([0.5, 0.5])
cost = np.array([[0.0, D], [D, 0.0]])

print(f"exact W1:            {w1_discrete(p, p, cost):.6f}")
ind = independent_pair(p, p, seed=1, size=100_000)
ent = entangled_pair(p, p, seed=1, size=100_000)
print(f"independent draws:   {np.mean(cost[ind.x, ind.y]):.6f}  (D/2 = {D / 2})")
print(f"shared-noise draws:  {np.mean(cost[ent.x, ent.y]):.6f}")
