"""A congested ring without metering.

Builds the smoke network, runs one seed with every ramp left open, and looks
at where the queue forms and how many vehicles are accounted for.
"""
from importlib.resources import files

import numpy as np

from rampmeter.control import NoControl
from rampmeter.dynamics import run_simulation
from rampmeter.harness import load_scenario

sc = load_scenario(str(files("rampmeter") / "scenarios" / "smoke.toml"))
net = sc.network
print(f"{net.topology} of {net.n_cells} cells, {net.total_length_m / 1000:.0f} km")
print("metered on-ramps:", net.controlled_ramps)

res = run_simulation(net, sc.demand, sc.sim, NoControl(), seed=1, noise=sc.noise)

# worst balance error over the whole run; should sit at rounding level
print(f"max |balance| = {res.max_balance_error:.2e} veh")

# the space-time speed matrix is (steps x cells); find the slowest cell at peak
peak = np.argmin(res.speed.mean(axis=1))
slow = np.argsort(res.speed[peak])[:5]
print(f"slowest moment t = {res.times_s[peak]:.0f} s, cells {sorted(slow.tolist())}")
print(f"  speeds there: {np.round(res.speed[peak, sorted(slow)], 1)} km/h")

# trips are cohort records with fractional weights
done = [t for t in res.trips if t.finished]
print(f"{len(res.trips)} trip cohorts, {sum(t.weight for t in res.trips):.0f} vehicles")
worst = max(done, key=lambda t: t.delay_s)
print(f"worst cohort: {worst.origin} -> {worst.destination}, delay {worst.delay_s:.0f} s")
