"""The full artifact pipeline through the command line.

Runs a comparison with the stock configuration, then renders the figures
from the emitted CSV/JSON files exactly the way an external consumer would.
"""

import json
import os
import subprocess
import sys

out = "demos/out/pipeline"
os.makedirs(out, exist_ok=True)

print("1. stable-moe compare ...")
subprocess.run([sys.executable, "-m", "stable_moe.cli", "compare",
                "--out", out, "--t-max", "150"], check=True)

with open(os.path.join(out, "ratios.json")) as handle:
    print("   ratios:", json.load(handle)["ratios"])

print("2. render throughput figure ...")
subprocess.run([sys.executable, "-m", "stable_moe_plots.cli",
                "--kind", "throughput",
                "--in", os.path.join(out, "trace.csv"),
                "--out", os.path.join(out, "throughput.png")], check=True)

print("3. single run + queue figure ...")
solo = os.path.join(out, "solo")
subprocess.run([sys.executable, "-m", "stable_moe.cli", "run",
                "--out", solo, "--t-max", "150"], check=True)
subprocess.run([sys.executable, "-m", "stable_moe_plots.cli",
                "--kind", "queues",
                "--in", os.path.join(solo, "trace.csv"),
                "--out", os.path.join(out, "queues.png")], check=True)
print(f"artifacts under {out}/")
