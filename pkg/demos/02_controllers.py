"""One control cycle by hand, then the same network under each controller."""
from importlib.resources import files

from rampmeter.control import (ControllerConfig, NeighborMessage, alinea_base,
                               compute_weights, coordination_term)
from rampmeter.harness import load_scenario, run_experiment

cfg = ControllerConfig(K=7000, o_hat=0.18, K_c=0.5, m=3)

# ALINEA: integral action on the occupancy error, then the flow bounds
for q_prev, occ in [(1000, 0.20), (1500, 0.10), (800, 0.25)]:
    print(f"q_prev {q_prev}, occupancy {occ:.2f} -> {alinea_base(q_prev, occ, cfg):.0f} veh/h")

sc = load_scenario(str(files("rampmeter") / "scenarios" / "smoke.toml"))
net = sc.network

# proximity weights: the nearest neighbours dominate
w = compute_weights(net, "R5", 3, "global")
print("weights of R5:", {k: round(v, 3) for k, v in w.items()})

# coordination nudges a ramp towards what its neighbours are doing
msgs = [NeighborMessage(j, 1200.0) for j in w]
print("correction at q_base = 900:", round(coordination_term(900.0, msgs, w, cfg.K_c), 1))
print("correction at consensus:", coordination_term(1200.0, msgs, w, cfg.K_c))

# three seeds per controller; efficiency and fairness side by side
print(f"\n{'controller':<12}{'delay h':>10}{'gini':>8}{'max s':>8}")
for name in ("no_control", "alinea", "metaline", "ceq_alinea"):
    r = run_experiment(sc, name, seeds=(1, 2, 3))
    print(f"{name:<12}{r.efficiency_mean['total_delay_h']:>10.1f}"
          f"{r.fairness_mean['gini']:>8.3f}{r.fairness_mean['rawlsian_max']:>8.0f}")
