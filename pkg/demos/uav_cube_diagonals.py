"""
Eight quadrotors on the cube diagonals
======================================

Second-order agents in 3D. The controller only ever sees states and the tube;
funnels bound the velocity tracking error.
"""

# %%
import time
from pathlib import Path

from sastt.cli import resolve_scenario
from sastt.engine import run_simulation
from sastt.monitors import run_monitors
from sastt.plotting import plot_radii, plot_trajectories
from sastt.scenario import load_scenario

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)
sc = load_scenario(resolve_scenario("uav_3d"))

# %%
t0 = time.perf_counter()
trace = run_simulation(sc)
print(f"simulated {trace.t[-1]:g} s in {time.perf_counter() - t0:.1f} s")
print(run_monitors(trace).text())

# %%
# worst velocity-funnel usage per agent (1 would be the funnel wall)
for a, peak in zip(sc.agents, trace.funnel_peak.max(axis=0)):
    print(f"{a.id}: {peak:.3f}")

plot_trajectories(trace, out / "uav_3d.svg")
plot_radii(trace, out / "uav_3d_radii.svg")
