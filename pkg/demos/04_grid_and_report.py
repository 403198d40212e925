"""A small parameter sweep, and the CLI round trip from saved trips to tables."""
import tempfile
from importlib.resources import files
from pathlib import Path

from rampmeter import cli
from rampmeter.harness import GridSpec, grid_search, load_scenario

path = files("rampmeter") / "scenarios" / "smoke.toml"
sc = load_scenario(str(path))

grid = GridSpec("ceq_alinea", {"K_c": (0.0, 0.5, 1.0), "o_hat": (0.16, 0.18)}, seeds=(1, 2))
res = grid_search(sc, grid)
for rank, (point, r) in enumerate(res.ranked, 1):
    print(f"{rank}. {point}  arrived {r.efficiency_mean['arrived']:.0f}"
          f"  gini {r.fairness_mean['gini']:.3f}")
print("chosen:", res.best_params)

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    cli.main(["benchmark", "--scenario", str(path), "--seeds", "1..2", "--controllers",
              "no_control,alinea", "--no-spacetime", "--out", str(tmp / "bench"), "--quiet"])
    cli.main(["report", str(tmp / "bench" / "runs"), "--out", str(tmp / "rep"), "--quiet"])
    print((tmp / "bench" / "efficiency.csv").read_text())
    same = all((tmp / "bench" / f).read_bytes() == (tmp / "rep" / f).read_bytes()
               for f in cli.TABLE_FILES)
    print("tables rebuilt from trips match:", same)
