"""
Eight robots, four crossing lines
=================================

Each pair of robots swaps the two ends of one line through the origin, and
each robot has its own deadline (5 s for the first, one second more for each
next one). r1 and r5 are selfish, the rest yield.
"""

# %%
import time
from pathlib import Path

import numpy as np

from sastt.cli import resolve_scenario
from sastt.engine import run_simulation
from sastt.monitors import nominal_trace_centers, run_monitors, social_deviation_metric
from sastt.plotting import plot_radii, plot_sif, plot_trajectories
from sastt.scenario import load_scenario, validate_scenario

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)
sc = load_scenario(resolve_scenario("crossing_2d"))
print(validate_scenario(sc))

# %%
t0 = time.perf_counter()
trace = run_simulation(sc)
print(f"{len(trace.t)} rows in {time.perf_counter() - t0:.1f} s")
report = run_monitors(trace)
print(report.text())

# %%
# where is everyone at their own deadline?
for k, a in enumerate(sc.agents):
    row = int(np.argmin(np.abs(trace.t - a.completion_time)))
    miss = np.linalg.norm(trace.y[row, k] - a.target_point)
    print(f"{a.id}: t_c = {a.completion_time:g} s, output {miss:.3f} m from target (ball radius {a.target_radius})")

# %%
nominal = nominal_trace_centers(trace)
dev = [social_deviation_metric(trace, a.id, nominal) for a in sc.agents]
for a, d in zip(sc.agents, dev):
    print(f"{a.id} s={a.social_index:<5g} deviation {d:.2f}")

plot_trajectories(trace, out / "crossing_2d.svg", stamps=[0, 3, 6, 12], deviations=dev)
plot_radii(trace, out / "crossing_2d_radii.svg")
plot_sif(trace, out / "crossing_2d_sif.svg")
