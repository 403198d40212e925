"""Fairness statistics on a published per-ramp delay column.

Eleven on-ramps, average delay in seconds, once without control and once
under ALINEA.
"""
from rampmeter.metrics import fairness, gini

no_control = [151.7, 402.0, 550.4, 188.8, 273.5, 235.3, 316.7, 282.7, 443.5, 66.7, 199.0]
alinea = [134.8, 136.9, 259.8, 145.4, 197.4, 179.5, 233.0, 208.2, 330.0, 47.7, 97.3]
ramps = [chr(ord("A") + i) for i in range(11)]

for label, col in (("No control", no_control), ("ALINEA", alinea)):
    rep = fairness(dict(zip(ramps, col)), dict.fromkeys(ramps, 1.0))
    print(f"{label:<11} mean {rep.harsanyian:6.1f}  max {rep.rawlsian_max:6.1f}  "
          f"gini {rep.gini:.4f}")

# ALINEA lowers every ramp's delay but the spread barely moves
print("\ngini is scale free:", gini(no_control) == gini([2 * x for x in no_control]))

# demand weights change only the Aristotelian average
busy = dict.fromkeys(ramps, 1.0) | {"C": 10.0}
rep = fairness(dict(zip(ramps, no_control)), busy)
print(f"weighting ramp C x10: weighted mean {rep.aristotelian:.1f} s, gini {rep.gini:.4f}")
