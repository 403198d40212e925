"""Scenario documents, multi-seed experiments and grid search.

A scenario is a TOML document with the sections ``[network]``, ``[demand]``,
``[simulation]``, ``[controller]`` and ``[experiment]``.  Every key is checked
against a schema; misspelt keys are errors rather than silently ignored.  The
key reference lives in ``docs/scenario.md``.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .control import (CONTROLLERS, Alinea, CEqAlinea, ControllerConfig, Metaline,
                      MetalineConfig, NoControl, metaline_gains)
from .dynamics import DemandProfile, SimParams, SimulationResult, run_simulation
from .metrics import (EFFICIENCY_FIELDS, FAIRNESS_FIELDS, EfficiencyReport, FairnessReport,
                      efficiency, fairness, fairness_from_trips, ramp_demand)
from .network import Cell, FreewayNetwork

WORKERS_ENV = "RAMPMETER_WORKERS"


class ScenarioError(ValueError):
    """Invalid scenario document; the message names the offending section and key."""


_CELL_KEYS = {"lanes", "free_speed_kmh", "jam_density_vpkpl", "capacity_vphpl",
              "backward_wave_kmh", "capacity_drop"}
_CTRL_KEYS = {"K", "o_hat", "K_c", "m", "norm_mode", "gamma_s_per_veh", "q_min", "q_max",
              "r_min", "r_max"}
SCHEMA: dict[str, set[str]] = {
    "network": {"topology", "n_cells", "cell_length_m", "detector_offset_cells", "cell_lanes",
                "ramps"} | _CELL_KEYS,
    "network.ramps": {"id", "kind", "position_m", "metered"},
    "demand": {"edges_s", "noise", "inflow_vph", "split"},
    "simulation": {"dt_s", "horizon_s", "warmup_s", "cycle_s", "cohort_s", "window_s",
                   "ramp_saturation_vph", "merge_priority", "diverge", "max_queue_veh"},
    "controller": {"kind"} | set(CONTROLLERS),
    "controller.no_control": {"r_max", "gamma_s_per_veh"},
    "controller.alinea": _CTRL_KEYS - {"K_c", "m", "norm_mode"},
    "controller.ceq_alinea": set(_CTRL_KEYS),
    "controller.metaline": (_CTRL_KEYS - {"K_c", "m", "norm_mode"})
    | {"k1", "k2", "K1", "K2", "bottleneck_cells", "o_set"},
    "experiment": {"seeds", "min_demand_share", "distance_bins_km", "grid"},
    "experiment.grid": {"controller", "objective", "seeds", "budget", "values"},
}
_REQUIRED_SECTIONS = ("network", "demand", "simulation", "controller", "experiment")
_OBJECTIVES = ("max_throughput", "min_total_delay")


@dataclass(frozen=True)
class GridSpec:
    controller: str
    values: Mapping[str, tuple]
    objective: str = "max_throughput"
    seeds: tuple[int, ...] = (1,)
    budget: int = 500

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ScenarioError(f"[experiment.grid] controller: unknown controller {self.controller!r}")
        if self.objective not in _OBJECTIVES:
            raise ScenarioError(f"[experiment.grid] objective: must be one of {_OBJECTIVES}")
        if not self.values or any(len(v) == 0 for v in self.values.values()):
            raise ScenarioError("[experiment.grid] values: every parameter needs a non-empty list")
        if not self.seeds:
            raise ScenarioError("[experiment.grid] seeds: need at least one seed")

    def points(self) -> list[dict[str, Any]]:
        names = list(self.values)
        return [dict(zip(names, combo))
                for combo in itertools.product(*(self.values[n] for n in names))]

    @property
    def cardinality(self) -> int:
        return math.prod(len(v) for v in self.values.values()) * len(self.seeds)


@dataclass(frozen=True)
class Scenario:
    network: FreewayNetwork
    demand: DemandProfile
    sim: SimParams
    noise: float
    controllers: Mapping[str, Mapping[str, Any]]
    default_controller: str
    seeds: tuple[int, ...]
    min_demand_share: float
    distance_bins_km: tuple[float, ...]
    grid: GridSpec | None
    document: Mapping[str, Any] = field(repr=False, compare=False)

    @property
    def window(self) -> tuple[float, float]:
        return self.sim.evaluation_window

    def digest(self) -> str:
        """Hash of the effective (post-override) document."""
        blob = json.dumps(self.document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_controller_params(self, name: str, params: Mapping[str, Any]) -> "Scenario":
        doc = copy.deepcopy(dict(self.document))
        doc.setdefault("controller", {}).setdefault(name, {}).update(params)
        return scenario_from_dict(doc)

    def with_seeds(self, seeds: Sequence[int]) -> "Scenario":
        doc = copy.deepcopy(dict(self.document))
        doc["experiment"]["seeds"] = list(seeds)
        return scenario_from_dict(doc)


# -- document handling ---------------------------------------------------------

def _check_keys(section: str, table: Mapping[str, Any]) -> None:
    allowed = SCHEMA[section]
    for key in table:
        if key not in allowed:
            raise ScenarioError(f"[{section}] unknown key {key!r}")


def parse_value(text: str) -> Any:
    """Interpret an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(doc: dict, overrides: Mapping[str, Any]) -> dict:
    """Set dotted keys (``controller.alinea.K``) in a copy of the document."""
    doc = copy.deepcopy(doc)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        if len(parts) < 2:
            raise ScenarioError(f"override {dotted!r} must be section.key")
        node = doc
        for i, part in enumerate(parts[:-1]):
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ScenarioError(f"override {dotted!r}: {'.'.join(parts[:i + 1])} is not a table")
        node[parts[-1]] = value
    return doc


def load_scenario(path: str | Path, overrides: Mapping[str, Any] | None = None) -> Scenario:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return scenario_from_dict(apply_overrides(doc, overrides or {}))


def _get(table, key, default, section, kind=float):
    if key not in table:
        return default
    value = table[key]
    try:
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ScenarioError(f"[{section}] {key}: expected {kind.__name__}, got {value!r}") from None
    return value


def scenario_from_dict(doc: Mapping[str, Any]) -> Scenario:
    for section in doc:
        if section not in _REQUIRED_SECTIONS:
            raise ScenarioError(f"unknown section [{section}]")
    for section in _REQUIRED_SECTIONS:
        if section not in doc:
            raise ScenarioError(f"missing section [{section}]")
    net_t, dem_t, sim_t = doc["network"], doc["demand"], doc["simulation"]
    ctl_t, exp_t = doc["controller"], doc["experiment"]
    _check_keys("network", net_t)
    for ramp in net_t.get("ramps", []):
        _check_keys("network.ramps", ramp)
    _check_keys("demand", dem_t)
    _check_keys("simulation", sim_t)
    _check_keys("controller", ctl_t)
    for name in CONTROLLERS:
        if name in ctl_t:
            _check_keys(f"controller.{name}", ctl_t[name])
    _check_keys("experiment", exp_t)
    if "grid" in exp_t:
        _check_keys("experiment.grid", exp_t["grid"])

    try:
        network = _network(net_t)
        sim = _sim(sim_t)
        demand = DemandProfile(
            edges_s=tuple(dem_t.get("edges_s", (0.0,))),
            inflow_vph={k: tuple(v) for k, v in dem_t.get("inflow_vph", {}).items()},
            split=dict(dem_t.get("split", {})))
    except ScenarioError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(str(exc)) from exc
    noise = _get(dem_t, "noise", 0.1, "demand")
    if not 0 <= noise < 1:
        raise ScenarioError("[demand] noise: must lie in [0, 1)")

    kind = _get(ctl_t, "kind", "alinea", "controller", str)
    if kind not in CONTROLLERS:
        raise ScenarioError(f"[controller] kind: unknown controller {kind!r}; valid: {', '.join(CONTROLLERS)}")
    controllers = {name: dict(ctl_t.get(name, {})) for name in CONTROLLERS if name in ctl_t}

    seeds = tuple(int(s) for s in exp_t.get("seeds", [1]))
    if not seeds:
        raise ScenarioError("[experiment] seeds: need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ScenarioError("[experiment] seeds: duplicate seeds")
    share = _get(exp_t, "min_demand_share", 0.005, "experiment")
    bins = tuple(float(b) for b in exp_t.get("distance_bins_km", (0.0, 5.0, 10.0, 20.0, 40.0)))
    grid = None
    if "grid" in exp_t:
        g = exp_t["grid"]
        grid = GridSpec(controller=_get(g, "controller", "ceq_alinea", "experiment.grid", str),
                        values={k: tuple(v) for k, v in g.get("values", {}).items()},
                        objective=_get(g, "objective", "max_throughput", "experiment.grid", str),
                        seeds=tuple(int(s) for s in g.get("seeds", seeds)),
                        budget=_get(g, "budget", 500, "experiment.grid", int))
        allowed = SCHEMA[f"controller.{grid.controller}"]
        for key in grid.values:
            if key not in allowed:
                raise ScenarioError(f"[experiment.grid.values] unknown key {key!r}")
    scenario = Scenario(network=network, demand=demand, sim=sim, noise=noise,
                        controllers=controllers, default_controller=kind, seeds=seeds,
                        min_demand_share=share, distance_bins_km=bins, grid=grid,
                        document=copy.deepcopy(dict(doc)))
    for name in controllers:
        make_controller(scenario, name)  # surface config errors at load time
    return scenario


def _network(t: Mapping[str, Any]) -> FreewayNetwork:
    s = "network"
    n_cells = _get(t, "n_cells", None, s, int)
    length = _get(t, "cell_length_m", 500.0, s)
    if n_cells is None:
        raise ScenarioError("[network] n_cells: required")
    cell_args = {k: _get(t, k, None, s, int if k == "lanes" else float) for k in _CELL_KEYS if k in t}
    try:
        cell = Cell(length_m=length, **cell_args)
        return FreewayNetwork.build(
            n_cells=n_cells, cell_length_m=length, ramps=t.get("ramps", []),
            topology=_get(t, "topology", "ring", s, str),
            detector_offset_cells=_get(t, "detector_offset_cells", 0, s, int),
            cell=cell, cell_lanes=t.get("cell_lanes"))
    except KeyError as exc:
        raise ScenarioError(f"[network.ramps] missing key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ScenarioError(f"[network] {exc}") from None


def _sim(t: Mapping[str, Any]) -> SimParams:
    s = "simulation"
    window = t.get("window_s")
    try:
        return SimParams(
            dt_s=_get(t, "dt_s", 20.0, s),
            horizon_s=_get(t, "horizon_s", 7800.0, s),
            warmup_s=_get(t, "warmup_s", 600.0, s),
            cycle_s=_get(t, "cycle_s", 60.0, s),
            cohort_s=_get(t, "cohort_s", 60.0, s),
            ramp_saturation_vph=_get(t, "ramp_saturation_vph", 7200.0, s),
            merge_priority=_get(t, "merge_priority", 0.5, s),
            diverge=_get(t, "diverge", "fifo", s, str),
            max_queue_veh=_get(t, "max_queue_veh", None, s),
            window_s=tuple(float(x) for x in window) if window is not None else None)
    except ValueError as exc:
        raise ScenarioError(f"[simulation] {exc}") from None


def controller_config(scenario: Scenario, name: str) -> ControllerConfig | MetalineConfig:
    block = dict(scenario.controllers.get(name, {}))
    base_keys = {k: block.pop(k) for k in list(block) if k in _CTRL_KEYS}
    try:
        base = ControllerConfig(cycle_s=scenario.sim.cycle_s, **base_keys)
        if name != "metaline":
            return base
        extra = {k: (tuple(map(tuple, v)) if k in ("K1", "K2") else
                     tuple(v) if isinstance(v, list) else v) for k, v in block.items()}
        return MetalineConfig(base=base, **extra)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"[controller.{name}] {exc}") from None


def make_controller(scenario: Scenario, name: str):
    if name not in CONTROLLERS:
        raise ScenarioError(f"unknown controller {name!r}; valid: {', '.join(CONTROLLERS)}")
    cfg = controller_config(scenario, name)
    ctrl = {"no_control": NoControl, "alinea": Alinea, "ceq_alinea": CEqAlinea,
            "metaline": Metaline}[name](cfg)
    if name == "metaline":
        try:
            metaline_gains(scenario.network, cfg)
        except ValueError as exc:
            raise ScenarioError(f"[controller.metaline] {exc}") from None
    return ctrl


# -- experiments ---------------------------------------------------------------

@dataclass
class SeedRun:
    controller: str
    seed: int
    efficiency: EfficiencyReport
    fairness: FairnessReport
    demand: dict[str, float]
    result: SimulationResult | None = None


class ExperimentError(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"seed {seed} failed: {cause}")
        self.seed = seed


def seed_run_from_trips(controller: str, seed: int, trips, window, min_demand_share: float,
                        ramps: Sequence[str]) -> SeedRun:
    """Evaluation-window reports for one seed; used both live and when re-reading trips."""
    eff = efficiency(trips, window)
    fair = fairness_from_trips(trips, window, min_demand_share, ramps)
    return SeedRun(controller, seed, eff, fair, ramp_demand(trips, window, ramps))


def run_seed(scenario: Scenario, controller: str, seed: int, keep: bool = False) -> SeedRun:
    ctrl = make_controller(scenario, controller)
    res = run_simulation(scenario.network, scenario.demand, scenario.sim, ctrl, seed, scenario.noise)
    run = seed_run_from_trips(controller, seed, res.trips, scenario.window,
                              scenario.min_demand_share, scenario.network.controlled_ramps)
    if keep:
        run.result = res
    return run


def _run_seed_job(args) -> SeedRun:
    scenario, controller, seed, keep = args
    try:
        return run_seed(scenario, controller, seed, keep)
    except Exception as exc:  # re-raised with the seed attached
        raise ExperimentError(seed, exc) from exc


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ScenarioError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def _map(jobs: list, workers: int | None) -> list:
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_run_seed_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_seed_job, jobs))


@dataclass
class ExperimentResult:
    controller: str
    runs: list[SeedRun]
    efficiency_mean: dict[str, float]
    efficiency_std: dict[str, float]
    fairness_mean: dict[str, float]
    fairness_std: dict[str, float]
    per_ramp_mean: dict[str, float]
    per_ramp_std: dict[str, float]
    fairness_of_means: FairnessReport | None

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(r.seed for r in self.runs)


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0 or np.all(np.isnan(arr)):
        return math.nan, math.nan
    arr = arr[~np.isnan(arr)]
    mean = math.fsum(arr) / arr.size
    std = math.sqrt(math.fsum((arr - mean) ** 2) / arr.size)
    return mean, std


def aggregate(controller: str, runs: Sequence[SeedRun]) -> ExperimentResult:
    """Element-wise mean and population std over seed runs, reduced in seed order."""
    runs = sorted(runs, key=lambda r: r.seed)
    eff_m, eff_s, fair_m, fair_s = {}, {}, {}, {}
    for f in EFFICIENCY_FIELDS:
        eff_m[f], eff_s[f] = _mean_std([getattr(r.efficiency, f) for r in runs])
    for f in FAIRNESS_FIELDS:
        fair_m[f], fair_s[f] = _mean_std([getattr(r.fairness, f) for r in runs])
    ramps = sorted({rid for r in runs for rid in r.fairness.per_ramp_avg_delay})
    pr_m, pr_s = {}, {}
    for rid in ramps:
        pr_m[rid], pr_s[rid] = _mean_std([r.fairness.per_ramp_avg_delay[rid] for r in runs
                                          if rid in r.fairness.per_ramp_avg_delay])
    of_means = None
    if pr_m:
        dem = {rid: math.fsum(r.demand.get(rid, 0.0) for r in runs) / len(runs) for rid in pr_m}
        of_means = fairness(pr_m, dem)
    return ExperimentResult(controller, list(runs), eff_m, eff_s, fair_m, fair_s, pr_m, pr_s, of_means)


def run_experiment(scenario: Scenario, controller: str | None = None,
                   seeds: Sequence[int] | None = None, keep: bool = False,
                   workers: int | None = None) -> ExperimentResult:
    """Run every seed independently and aggregate the evaluation-window reports."""
    controller = controller or scenario.default_controller
    make_controller(scenario, controller)
    seeds = tuple(scenario.seeds if seeds is None else seeds)
    runs = _map([(scenario, controller, s, keep) for s in seeds], workers)
    return aggregate(controller, runs)


# -- grid search ---------------------------------------------------------------

@dataclass
class GridResult:
    spec: GridSpec
    ranked: list[tuple[dict, ExperimentResult]]

    @property
    def best_params(self) -> dict:
        return self.ranked[0][0]

    def best_config(self, scenario: Scenario):
        return controller_config(scenario.with_controller_params(self.spec.controller,
                                                                 self.best_params),
                                 self.spec.controller)


class BudgetExceeded(ScenarioError):
    pass


def _point_key(point: Mapping[str, Any]) -> tuple:
    return tuple((k, str(v) if isinstance(v, str) else float(v)) for k, v in point.items())


def rank_key(objective: str):
    def key(item):
        point, res = item
        thr = res.efficiency_mean["arrived"]
        delay = res.efficiency_mean["total_delay_h"]
        if objective == "max_throughput":
            return (-thr, delay, _point_key(point))
        return (delay, -thr, _point_key(point))
    return key


def grid_search(scenario: Scenario, grid: GridSpec | None = None,
                workers: int | None = None) -> GridResult:
    """Evaluate every Cartesian point of the grid and rank by the objective."""
    grid = grid or scenario.grid
    if grid is None:
        raise ScenarioError("[experiment.grid] missing: no grid to search")
    if grid.cardinality > grid.budget:
        raise BudgetExceeded(
            f"grid needs {grid.cardinality} runs, budget is {grid.budget}")
    points = grid.points()
    scenarios = [scenario.with_controller_params(grid.controller, p) for p in points]
    jobs = [(sc, grid.controller, s, False) for sc in scenarios for s in grid.seeds]
    runs = _map(jobs, workers)
    n = len(grid.seeds)
    results = [(p, aggregate(grid.controller, runs[i * n:(i + 1) * n]))
               for i, p in enumerate(points)]
    results.sort(key=rank_key(grid.objective))
    return GridResult(grid, results)
