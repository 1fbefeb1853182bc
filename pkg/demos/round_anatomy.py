"""What a single straggler-tolerant round looks like.

Forty workers with exponential per-update times; the server stops the round
once 30 of them have finished 2 local updates. Fast workers will have done
more than 2, stragglers fewer, and some none at all.
"""
import numpy as np

from stsyn.simulator import round_clocks
from stsyn.strategies import pasgd_round, stsyn_round
from stsyn.timing import OrderStatParams, analyze

M, K, U, MU = 40, 30, 2, 1e-4

clocks = round_clocks(timing_seed=7, M=M, j=0, mu=MU)
plan = stsyn_round(clocks, K, U)
print(f"round length {plan.duration * 1e3:.3f} ms, {plan.n_uploaders} of {M} workers upload")
values, counts = np.unique(plan.updates, return_counts=True)
for v, c in zip(values, counts):
    print(f"  {v:2d} updates: {'#' * c} ({c})")

# the same clocks under periodic averaging: everyone must finish U updates
slow = pasgd_round(round_clocks(timing_seed=7, M=M, j=0, mu=MU), U)
print(f"waiting for all workers would take {slow.duration * 1e3:.3f} ms")

# averages over many rounds against the closed form
row = analyze(OrderStatParams(M, K, U), MU, mc_trials=200, seed=0)
print(f"mean updates per worker: formula {row['u_bar']:.4f}, 200 simulated rounds {row['u_bar_mc']:.4f}")
print(f"mean uploaders per round: formula {row['s_bar']:.3f}, 200 simulated rounds {row['s_bar_mc']:.3f}")
