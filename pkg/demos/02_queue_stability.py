"""Queue stability under the stock configuration.

Runs the optimizer for the full horizon and plots every server's token and
energy backlog with the global mean overlaid: early transient growth, then
stabilization.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

import stable_moe as sm

p = sm.default_params()
print(f"running stable-moe for {p.horizon} slots "
      f"(arrival rate {p.arrival_rate:g} tokens/slot, {p.num_servers} servers) ...")
result = sm.run("stable-moe", p)
s = result.summary
print(f"cumulative throughput: {s.cumulative_throughput}")
print(f"final token backlogs per server: {list(s.final_token_backlog)}")
print(f"final energy backlogs per server: {[round(z, 2) for z in s.final_energy_backlog]}")
print(f"drift criterion Q(T)/T: {max(s.final_token_backlog) / p.horizon:.4f} (want <= 0.05)")

q = result.trace.token_backlog_matrix()
z = result.trace.energy_backlog_matrix()
fig, axes = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
for ax, series, label in ((axes[0], q, "token backlog [tokens]"),
                          (axes[1], z, "energy backlog [J]")):
    for j in range(p.num_servers):
        ax.plot(series[:, j], color="tab:blue", alpha=0.4, lw=0.8)
    ax.axhline(series.mean(), color="red", ls="--", label=f"global mean {series.mean():.2f}")
    ax.set_ylabel(label)
    ax.legend()
axes[1].set_xlabel("slot")
os.makedirs("demos/out", exist_ok=True)
fig.tight_layout()
fig.savefig("demos/out/queue_stability.png", dpi=130)
print("wrote demos/out/queue_stability.png")
