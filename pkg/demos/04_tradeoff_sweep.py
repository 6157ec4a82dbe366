"""Sweep the stability/utility trade-off weight.

A tiny weight under-prices throughput and leaves the system sluggish; past
a moderate weight the queues empty out and the utility saturates.
"""

import stable_moe as sm
from stable_moe import sim

p = sm.default_params(horizon=200)
values = [0.1, 1.0, 10.0, 100.0]
print(f"sweeping trade-off weight over {values} at horizon {p.horizon} ...")
results = sim.sweep_v(values, p)
print(f"{'weight':>8} {'throughput':>11} {'utility':>9} {'mean total backlog':>19}")
for v, r in zip(values, results):
    s = r.summary
    print(f"{v:8g} {s.cumulative_throughput:11d} {s.utility:9.3f} "
          f"{sum(s.avg_token_backlog):19.2f}")
