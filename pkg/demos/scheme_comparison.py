"""Five synchronization schemes on one logistic-regression problem.

All runs share the timing streams, so differences come from the protocols
and not from luckier clocks. Output goes to $STSYN_OUTPUT_ROOT (default
./demo_output): one trace directory per scheme plus two CSVs of
loss-versus-cost for plotting.
"""
import os

import numpy as np

from stsyn.config import load_config
from stsyn.persist import emit_plot_data, persist_trace
from stsyn.simulator import comm_to_target, prepare, run_experiment, time_to_target
from stsyn.strategies import SchemeSpec

here = os.path.dirname(os.path.abspath(__file__))
out = os.path.join(os.environ.get("STSYN_OUTPUT_ROOT", "demo_output"), "schemes")
base = load_config(os.path.join(here, os.pardir, "configs", "logistic_stsyn.ini")).replace(rounds=150)
obj, shards = prepare(base)

f_min = obj.reference_minimum()[1]
f0 = obj.loss(np.zeros(obj.dim))
target = f_min + 0.1 * (f0 - f_min)
print(f"F(0) = {f0:.4f}, best loss {f_min:.4f}, target {target:.4f}")

schemes = {
    "stsyn": SchemeSpec("stsyn", K=35, U=20),
    "pasgd": SchemeSpec("pasgd", U=6),
    "fedavg": SchemeSpec("fedavg", sample_size=20, U=6),
    "adacomm": SchemeSpec("adacomm", tau0=20),
    "adasync": SchemeSpec("adasync", K0=10),
}
traces = {}
for name, scheme in schemes.items():
    cfg = base.replace(scheme=scheme, rounds=3000 if name == "adasync" else base.rounds)
    traces[name] = run_experiment(cfg, obj, shards)
    persist_trace(traces[name], os.path.join(out, name))
    t, c = time_to_target(traces[name], target), comm_to_target(traces[name], target)
    t_s = "not reached" if t is None else f"{t * 1e3:8.2f} ms"
    c_s = "" if c is None else f"{c:6d} transfers"
    print(f"{name:8s} {t_s:>14} {c_s}")

targets = np.linspace(f0, target, 25)
emit_plot_data(traces, "time", os.path.join(out, "loss_vs_time.csv"), targets=targets)
emit_plot_data(traces, "comm", os.path.join(out, "loss_vs_comm.csv"), targets=targets)
print(f"traces and plot data written under {out}")
