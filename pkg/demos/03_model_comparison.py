"""Model and dimension comparison through the marginal likelihood.

Runs a small sweep over error families and dimensions on data whose true
dimension is known, then reads the result as Bayes factors. The evidence
peaks at the generating dimension while STRESS alone keeps improving more
slowly past it.
"""

import numpy as np

from gbmds import SMCConfig, bayes_factor, gen_known_dimension, sweep

_, D = gen_known_dimension(30, seed=1)

table = sweep(
    D,
    families=("tn",),
    metrics=("euclidean",),
    dims=(2, 3, 4, 5, 6),
    config=SMCConfig(n_particles=150, seed=5),
)

print("family  metric     p   logM        stress")
for cell in table.cells:
    print(f"{cell.family:6s}  {cell.metric:9s}  {cell.p}  {cell.log_marginal:10.2f}  "
          f"{cell.stress:.4f}")
winner = table.winner
print(f"\nwinner: {winner.family} at p={winner.p}")

runner_up = max(
    (c for c in table.cells if c is not winner and c.valid),
    key=lambda c: c.log_marginal,
)
bf = bayes_factor(winner.log_marginal, runner_up.log_marginal)
print(f"against p={runner_up.p}: Bayes factor {bf.value:.3g} -> {bf.describe()}")
