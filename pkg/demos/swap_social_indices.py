"""
Two robots swapping sides
=========================

Two robots cross a narrow field between two pillars while two slow discs
drift past. The only difference between the two runs is which robot is the
cooperative one. The cooperative robot should bend its tube further away from
its straight goal-only path.
"""

# %%
from pathlib import Path

import numpy as np

from sastt.cli import resolve_scenario
from sastt.engine import run_simulation
from sastt.monitors import nominal_trace_centers, run_monitors, social_deviation_metric
from sastt.plotting import plot_trajectories
from sastt.scenario import load_scenario

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

# %%
# run both index assignments
for name in ("hardware_swap", "hardware_swap_reversed"):
    sc = load_scenario(resolve_scenario(name))
    trace = run_simulation(sc)
    nominal = nominal_trace_centers(trace)
    dev = [social_deviation_metric(trace, a.id, nominal) for a in sc.agents]
    print(f"{name}: " + ", ".join(f"{a.id} (s={a.social_index}) deviation {d:.2f}"
                                  for a, d in zip(sc.agents, dev)))
    print("   ratio cooperative/selfish:", round(max(dev) / min(dev), 2))
    print("   all monitors pass:", run_monitors(trace).all_passed)

    # the encounter happens around the middle of the run
    plot_trajectories(trace, out / f"{name}.svg", stamps=[20.0, 120.0], deviations=dev)

# %%
# how close did the two tubes get?
gap = np.linalg.norm(trace.sigma[:, 0] - trace.sigma[:, 1], axis=1) - trace.rho.sum(axis=1)
print("closest tube gap %.3f m at t = %.1f s" % (gap.min(), trace.t[gap.argmin()]))
