"""How K and U trade wall-clock time against communication.

Smaller K shortens every round; larger U buys more local progress per
transfer until nearly every worker uploads anyway.
"""
import os

import numpy as np

from stsyn.config import load_config
from stsyn.simulator import comm_to_target, prepare, run_sweep, time_to_target
from stsyn.timing import OrderStatParams, avg_local_updates

here = os.path.dirname(os.path.abspath(__file__))
base = load_config(os.path.join(here, os.pardir, "configs", "logistic_stsyn.ini")).replace(rounds=3000)
obj, shards = prepare(base)
f_min = obj.reference_minimum()[1]
f0 = obj.loss(np.zeros(obj.dim))
target = f_min + 0.1 * (f0 - f_min)
base = base.replace(target_loss=target)

print("K sweep (U = 20)")
for p in run_sweep(base, "K", [1, 10, 25, 40]):
    u_bar = avg_local_updates(OrderStatParams(base.workers, p.value, 20))
    print(f"  K={p.value:3d}  mean updates {u_bar:6.2f}  time {time_to_target(p.trace, target) * 1e3:7.3f} ms"
          f"  comm {comm_to_target(p.trace, target):6d}")

print("U sweep (K = 35)")
for p in run_sweep(base, "U", [1, 10, 40, 100]):
    print(f"  U={p.value:3d}  rounds {len(p.trace.records):4d}  time {time_to_target(p.trace, target) * 1e3:7.3f} ms"
          f"  comm {comm_to_target(p.trace, target):6d}")
