"""Command-line entry point: ``rampmeter {simulate,benchmark,gridsearch,report}``.

All artifacts are CSV (plus a JSON manifest per run).  Worker parallelism is
read from ``RAMPMETER_WORKERS`` by the harness.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .control import CONTROLLERS
from .dynamics import ConfigurationError, ControllerContractError, run_simulation
from .harness import (ExperimentError, ExperimentResult, Scenario, ScenarioError, SeedRun,
                      aggregate, controller_config, grid_search, load_scenario,
                      make_controller, parse_value, run_experiment, seed_run_from_trips)
from .io import (cell, read_trips, write_ramp_log, write_spacetime, write_table,
                 write_trips)
from .metrics import EFFICIENCY_FIELDS, FAIRNESS_FIELDS, MetricsError, relative_delay_by_distance

log = logging.getLogger("rampmeter")

EFFICIENCY_ROWS = (
    ("departed", "Total Departed Vehicles", 1),
    ("arrived", "Total Arrived Vehicles", 1),
    ("arrival_rate", "Arrival Rate (%)", 1),
    ("total_travel_time_h", "Total Travel Time (h)", 1),
    ("total_distance_km", "Total Travel Distance (km)", 1),
    ("total_delay_h", "Total Delay (h)", 1),
    ("avg_speed_kmh", "Average Speed (km/h)", 1),
    ("avg_delay_s_per_veh", "Average Delay (s/veh)", 0),
    ("unfinished", "Unfinished Trips", 1),
)
FAIRNESS_ROWS = (
    ("harsanyian", "Harsanyian (Avg.)", 1),
    ("gini", "Egalitarian (Gini)", 4),
    ("rawlsian_max", "Rawlsian (Max.)", 1),
    ("aristotelian", "Aristotelian (Weight.Avg.)", 1),
)
RUN_FILES = ("trips.csv", "ramp_log.csv", "spacetime_speed.csv", "spacetime_occupancy.csv",
             "manifest.json")
TABLE_FILES = ("efficiency.csv", "fairness.csv", "fairness_of_means.csv", "per_seed.csv",
               "distance_delay.csv")


class CommandError(RuntimeError):
    pass


# -- output bookkeeping --------------------------------------------------------

class Outputs:
    """Tracks files written by a command so a failure can remove them again."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []
        self.dirs: list[Path] = []

    def mkdir(self, path: Path) -> Path:
        missing = []
        p = path
        while not p.exists():
            missing.append(p)
            p = p.parent
        path.mkdir(parents=True, exist_ok=True)
        self.dirs.extend(reversed(missing))
        return path

    def path(self, *parts: str) -> Path:
        p = self.root.joinpath(*parts)
        self.mkdir(p.parent)
        self.files.append(p)
        return p

    def rollback(self) -> None:
        for f in self.files:
            f.unlink(missing_ok=True)
        for d in reversed(self.dirs):
            try:
                d.rmdir()
            except OSError:
                pass

    def verify(self, optional: Sequence[str] = ()) -> list[str]:
        """Names of declared outputs that are missing or empty."""
        bad = []
        for f in self.files:
            if not f.is_file() or (f.stat().st_size == 0 and f.name not in optional):
                bad.append(str(f))
        return bad


def _write_json(path: Path, data: Mapping) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- argument helpers ----------------------------------------------------------

def parse_seeds(text: str) -> tuple[int, ...]:
    """``7``, ``1..10`` (inclusive) or ``1,4,9``."""
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split("..", 1))
            if hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1))
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}; use N, N..M or N,M,...") from None


def parse_set(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"--set expects KEY=VALUE, got {text!r}")
    return key.strip(), parse_value(value.strip())


def parse_controllers(text: str) -> tuple[str, ...]:
    names = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [n for n in names if n not in CONTROLLERS]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"unknown controller {', '.join(bad) or '(none)'}; valid names: {', '.join(CONTROLLERS)}")
    return names


def _scenario(args) -> Scenario:
    return load_scenario(args.scenario, dict(args.set or []))


def _seeds(args, scenario: Scenario) -> tuple[int, ...]:
    if getattr(args, "seeds", None):
        return args.seeds
    if getattr(args, "seed", None) is not None:
        return (args.seed,)
    return scenario.seeds


def _ordered(names) -> list[str]:
    """Controllers in the canonical column order."""
    return [c for c in CONTROLLERS if c in set(names)]


# -- manifests -----------------------------------------------------------------

def run_manifest(scenario: Scenario, controller: str, seed: int) -> dict:
    cfg = controller_config(scenario, controller)
    return {
        "artifact": "rampmeter",
        "version": __version__,
        "scenario_hash": scenario.digest(),
        "seed": seed,
        "controller": controller,
        "controller_config": json.loads(json.dumps(dataclasses.asdict(cfg))),
        "window_s": list(scenario.window),
        "min_demand_share": scenario.min_demand_share,
        "ramps": list(scenario.network.controlled_ramps),
        "distance_bins_km": list(scenario.distance_bins_km),
        "noise": scenario.noise,
    }


def write_run(out: Outputs, parts: tuple[str, ...], scenario: Scenario, controller: str,
              seed: int, result, spacetime: bool = True) -> None:
    write_trips(out.path(*parts, "trips.csv"), result.trips)
    write_ramp_log(out.path(*parts, "ramp_log.csv"), result.ramp_log)
    if spacetime:
        write_spacetime(out.path(*parts, "spacetime_speed.csv"), result.times_s,
                        result.cell_positions_m, result.speed)
        write_spacetime(out.path(*parts, "spacetime_occupancy.csv"), result.times_s,
                        result.cell_positions_m, result.occupancy)
    _write_json(out.path(*parts, "manifest.json"), run_manifest(scenario, controller, seed))


# -- tables --------------------------------------------------------------------

def _fmt(x: float, digits: int) -> str:
    return "n/a" if x is None or math.isnan(x) else f"{x:.{digits}f}"


def write_tables(out: Outputs, results: Mapping[str, ExperimentResult], ramps: Sequence[str],
                 distance: Mapping[str, list]) -> None:
    """Result tables with controllers as columns and "mean (std)" cells."""
    ctrls = _ordered(results)
    write_table(out.path("efficiency.csv"), ["metric", *ctrls],
                [[label] + [cell(results[c].efficiency_mean[f], results[c].efficiency_std[f], d)
                            for c in ctrls] for f, label, d in EFFICIENCY_ROWS])

    rows = []
    for rid in ramps:
        rows.append([rid] + [cell(results[c].per_ramp_mean.get(rid, math.nan),
                                  results[c].per_ramp_std.get(rid, math.nan), 1) for c in ctrls])
    for f, label, d in FAIRNESS_ROWS:
        rows.append([label] + [cell(results[c].fairness_mean[f], results[c].fairness_std[f], d)
                               for c in ctrls])
    write_table(out.path("fairness.csv"), ["ramp", *ctrls], rows)

    write_table(out.path("fairness_of_means.csv"), ["notion", *ctrls],
                [[label] + [_fmt(getattr(results[c].fairness_of_means, f, math.nan)
                                 if results[c].fairness_of_means else math.nan, d)
                            for c in ctrls] for f, label, d in FAIRNESS_ROWS])

    header = ["controller", "seed", *EFFICIENCY_FIELDS, *FAIRNESS_FIELDS,
              *(f"delay_{r}" for r in ramps)]
    rows = []
    for c in ctrls:
        for run in results[c].runs:
            pr = run.fairness.per_ramp_avg_delay
            rows.append([c, run.seed]
                        + [repr(float(getattr(run.efficiency, f))) for f in EFFICIENCY_FIELDS]
                        + [repr(float(getattr(run.fairness, f))) for f in FAIRNESS_FIELDS]
                        + [repr(float(pr[r])) if r in pr else "" for r in ramps])
    write_table(out.path("per_seed.csv"), header, rows)

    bins = None
    rows_by_bin: dict = {}
    for c in ctrls:
        for rep in distance[c]:
            bins = bins or list(rep.per_bin)
            for b, v in rep.per_bin.items():
                rows_by_bin.setdefault((c, b), []).append(v)
    table = []
    for b in bins or []:
        row = [f"{b[0]:g}-{b[1]:g} km"]
        for c in ctrls:
            vals = [v for v in rows_by_bin.get((c, b), []) if v is not None]
            row.append(cell(*_mean_std(vals), 2) if vals else "n/a")
        table.append(row)
    gini_row, rej_row = ["Gini across bins"], ["Rejected (zero distance)"]
    for c in ctrls:
        g = [r.gini for r in distance[c] if not math.isnan(r.gini)]
        gini_row.append(cell(*_mean_std(g), 4) if g else "n/a")
        rej_row.append(cell(*_mean_std([r.rejected for r in distance[c]]), 1))
    write_table(out.path("distance_delay.csv"), ["distance_bin", *ctrls],
                table + [gini_row, rej_row])


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)


# -- commands ------------------------------------------------------------------

def cmd_simulate(args, out: Outputs) -> None:
    scenario = _scenario(args)
    if args.controllers and len(args.controllers) != 1:
        raise CommandError("simulate runs one controller; pass a single name to --controllers")
    controller = args.controllers[0] if args.controllers else scenario.default_controller
    seeds = _seeds(args, scenario)
    if args.seeds and len(seeds) != 1:
        raise CommandError("simulate runs one seed; use --seed N")
    seed = seeds[0] if (args.seed is not None or args.seeds) else scenario.seeds[0]
    log.info("simulate %s seed %d", controller, seed)
    result = run_simulation(scenario.network, scenario.demand, scenario.sim,
                            make_controller(scenario, controller), seed, scenario.noise)
    write_run(out, (), scenario, controller, seed, result)


def _benchmark_controllers(args, scenario: Scenario) -> list[str]:
    if args.controllers:
        missing = [c for c in args.controllers if c not in scenario.controllers]
        if missing:
            raise CommandError(f"no [controller.{missing[0]}] block in the scenario")
        return _ordered(args.controllers)
    return _ordered(scenario.controllers) or [scenario.default_controller]


def cmd_benchmark(args, out: Outputs) -> None:
    scenario = _scenario(args)
    seeds = _seeds(args, scenario)
    results, distance = {}, {}
    for c in _benchmark_controllers(args, scenario):
        log.info("benchmark %s over %d seeds", c, len(seeds))
        res = run_experiment(scenario, c, seeds, keep=True)
        results[c] = res
        distance[c] = []
        for run in res.runs:
            write_run(out, ("runs", c, f"seed_{run.seed}"), scenario, c, run.seed, run.result,
                      spacetime=args.spacetime)
            distance[c].append(relative_delay_by_distance(
                run.result.trips, scenario.distance_bins_km, scenario.window))
            run.result = None
    write_tables(out, results, scenario.network.controlled_ramps, distance)


def cmd_gridsearch(args, out: Outputs) -> None:
    scenario = _scenario(args)
    if scenario.grid is None:
        raise CommandError("the scenario has no [experiment.grid] table")
    grid = scenario.grid
    if args.seeds or args.seed is not None:
        grid = dataclasses.replace(grid, seeds=_seeds(args, scenario))
    log.info("grid search: %d runs", grid.cardinality)
    res = grid_search(scenario, grid)
    names = list(grid.values)
    header = ["block", "rank", "point", *names, "seed", *EFFICIENCY_FIELDS, *FAIRNESS_FIELDS]
    order = {id(r): i for i, (_, r) in enumerate(res.ranked)}
    points = grid.points()
    index = {json.dumps(p, sort_keys=True): i for i, p in enumerate(points)}
    rows = []
    per_point = sorted(res.ranked, key=lambda pr: index[json.dumps(pr[0], sort_keys=True)])
    for p, r in per_point:
        pi = index[json.dumps(p, sort_keys=True)]
        for run in r.runs:
            rows.append(["run", "", pi, *(p[n] for n in names), run.seed]
                        + [repr(float(getattr(run.efficiency, f))) for f in EFFICIENCY_FIELDS]
                        + [repr(float(getattr(run.fairness, f))) for f in FAIRNESS_FIELDS])
    for p, r in res.ranked:
        pi = index[json.dumps(p, sort_keys=True)]
        rows.append(["aggregate", order[id(r)] + 1, pi, *(p[n] for n in names), "mean"]
                    + [repr(float(r.efficiency_mean[f])) for f in EFFICIENCY_FIELDS]
                    + [repr(float(r.fairness_mean[f])) for f in FAIRNESS_FIELDS])
    write_table(out.path("gridsearch.csv"), header, rows)
    best = res.best_config(scenario)
    _write_json(out.path("best.json"), {
        "controller": grid.controller, "objective": grid.objective,
        "params": res.best_params, "config": dataclasses.asdict(best),
        "scenario_hash": scenario.digest(), "version": __version__})


def _collect_runs(run_dirs: Sequence[Path]) -> list[tuple[Path, dict]]:
    if not run_dirs:
        raise CommandError("report needs at least one run directory")
    found = []
    for d in run_dirs:
        if not d.is_dir():
            raise CommandError(f"not a directory: {d}")
        manifests = sorted(d.rglob("manifest.json"))
        if not manifests:
            raise CommandError(f"no run manifest under {d}")
        for m in manifests:
            with open(m, encoding="utf-8") as fh:
                found.append((m.parent, json.load(fh)))
    return found


def cmd_report(args, out: Outputs) -> None:
    runs = _collect_runs([Path(p) for p in args.run_dirs])
    warnings = []
    seen: dict[tuple[str, int], Path] = {}
    per_ctrl: dict[str, list[SeedRun]] = {}
    distance: dict[str, list] = {}
    ref = runs[0][1]
    ramps = list(ref["ramps"])
    for run_dir, man in runs:
        if man.get("version") != __version__:
            warnings.append(f"{run_dir}: written by version {man.get('version')}, "
                            f"reading with {__version__}")
        for key in ("scenario_hash", "window_s", "min_demand_share", "ramps", "distance_bins_km"):
            if man.get(key) != ref.get(key):
                warnings.append(f"{run_dir}: {key} differs from {runs[0][0]}")
        key = (man["controller"], int(man["seed"]))
        if key in seen:
            warnings.append(f"{run_dir}: duplicate {key[0]} seed {key[1]}, keeping {seen[key]}")
            continue
        seen[key] = run_dir
        trips = read_trips(run_dir / "trips.csv")
        window = tuple(man["window_s"])
        per_ctrl.setdefault(key[0], []).append(seed_run_from_trips(
            key[0], key[1], trips, window, man["min_demand_share"], man["ramps"]))
        distance.setdefault(key[0], []).append(
            (key[1], relative_delay_by_distance(trips, ref["distance_bins_km"], window)))
        for r in man["ramps"]:
            if r not in ramps:
                ramps.append(r)
    results = {c: aggregate(c, rs) for c, rs in per_ctrl.items()}
    dist = {c: [rep for _, rep in sorted(v, key=lambda x: x[0])] for c, v in distance.items()}
    write_tables(out, results, ramps, dist)
    with open(out.path("warnings.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(w + "\n" for w in warnings)
    for w in warnings:
        log.warning(w)


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, type=Path, help="output directory (created)")
    verb = common.add_mutually_exclusive_group()
    verb.add_argument("--quiet", action="store_true")
    verb.add_argument("--verbose", action="store_true")

    sc = argparse.ArgumentParser(add_help=False)
    sc.add_argument("--scenario", required=True, type=Path)
    sc.add_argument("--set", action="append", type=parse_set, metavar="KEY=VALUE",
                    help="dotted override, e.g. controller.alinea.K=5000 (repeatable)")
    sc.add_argument("--seed", type=int)
    sc.add_argument("--seeds", type=parse_seeds, metavar="N..M")
    sc.add_argument("--controllers", type=parse_controllers, metavar="LIST",
                    help=f"comma-separated subset of {','.join(CONTROLLERS)}")

    p = argparse.ArgumentParser(prog="rampmeter", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common, sc], help="one seed, one controller")
    b = sub.add_parser("benchmark", parents=[common, sc], help="all seeds per controller")
    b.add_argument("--no-spacetime", dest="spacetime", action="store_false",
                   help="skip per-run space-time matrices")
    sub.add_parser("gridsearch", parents=[common, sc], help="Cartesian sweep from [experiment.grid]")
    r = sub.add_parser("report", parents=[common], help="recompute tables from saved trips")
    r.add_argument("run_dirs", nargs="*", type=Path)
    return p


COMMANDS = {"simulate": cmd_simulate, "benchmark": cmd_benchmark,
            "gridsearch": cmd_gridsearch, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr,
                        force=True)
    out = Outputs(args.out)
    try:
        out.mkdir(args.out)
        COMMANDS[args.command](args, out)
    except (ScenarioError, CommandError, ConfigurationError, ControllerContractError,
            ExperimentError, MetricsError, ValueError, KeyError, OSError) as exc:
        out.rollback()
        print(f"rampmeter {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except BaseException:
        out.rollback()
        raise
    bad = out.verify(optional=("warnings.txt",))
    if bad:
        print(f"rampmeter {args.command}: missing or empty outputs: {', '.join(bad)}",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
