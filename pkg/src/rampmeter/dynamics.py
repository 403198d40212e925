"""Cell-transmission plant with metered on-ramp queues and trip accounting.

Vehicles are carried as a continuum, split by origin-destination pair in every
cell and queue.  Cells mix their contents proportionally; an off-ramp drains
the vehicles bound for it, so every OD pair follows one fixed route and trip
distances are exact.  Trips are recovered afterwards from cumulative
departure/arrival curves per OD pair (first-in first-out within a pair),
binned into departure cohorts.

Units: flows in veh/h, densities in veh/km/lane, time in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping

import numpy as np

from .network import FreewayNetwork

MAINLINE_IN = "mainline_in"
MAINLINE_OUT = "mainline_out"


class ConfigurationError(ValueError):
    """Raised when a plant or scenario configuration is unusable."""


class ControllerContractError(RuntimeError):
    """Raised when a controller emits a metering rate outside [0, 1]."""


@dataclass(frozen=True)
class DemandProfile:
    """Piecewise-constant origin inflows plus off-ramp exit fractions.

    ``edges_s`` holds the start time of every piece (the first is 0); the last
    piece runs to the end of the horizon.  ``inflow_vph`` maps each origin (an
    on-ramp id, or ``mainline_in`` on a line) to one level per piece.
    ``split`` maps off-ramp ids to the fraction of passing traffic that leaves.
    """

    edges_s: tuple[float, ...]
    inflow_vph: Mapping[str, tuple[float, ...]]
    split: Mapping[str, float]

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges_s)
        if not edges or edges[0] != 0.0:
            raise ConfigurationError("demand pieces must start at t=0")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigurationError("demand piece boundaries must be strictly increasing")
        object.__setattr__(self, "edges_s", edges)
        levels = {}
        for origin, vals in self.inflow_vph.items():
            vals = tuple(float(v) for v in vals)
            if len(vals) != len(edges):
                raise ConfigurationError(
                    f"origin {origin!r} lists {len(vals)} levels for {len(edges)} pieces")
            if any(v < 0 or not math.isfinite(v) for v in vals):
                raise ConfigurationError(f"origin {origin!r} has a negative inflow")
            levels[str(origin)] = vals
        object.__setattr__(self, "inflow_vph", levels)
        split = {str(k): float(v) for k, v in self.split.items()}
        for k, v in split.items():
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"split fraction for {k!r} outside [0, 1]")
        object.__setattr__(self, "split", split)

    def level(self, origin: str, t: float) -> float:
        vals = self.inflow_vph.get(origin)
        if vals is None:
            return 0.0
        idx = int(np.searchsorted(self.edges_s, t, side="right")) - 1
        return vals[max(idx, 0)]

    def perturbed(self, seed: int, noise: float) -> "DemandProfile":
        """Scale every (origin, piece) level by an independent U(1-noise, 1+noise) draw."""
        if noise == 0:
            return self
        if not 0 <= noise < 1:
            raise ConfigurationError("demand noise must lie in [0, 1)")
        rng = np.random.default_rng(seed)
        levels = {}
        for origin in sorted(self.inflow_vph):
            factors = rng.uniform(1.0 - noise, 1.0 + noise, size=len(self.edges_s))
            levels[origin] = tuple(float(v * f) for v, f in zip(self.inflow_vph[origin], factors))
        return replace(self, inflow_vph=levels)


@dataclass(frozen=True)
class SimParams:
    dt_s: float = 20.0
    horizon_s: float = 7800.0
    warmup_s: float = 600.0
    cycle_s: float = 60.0
    cohort_s: float = 60.0
    ramp_saturation_vph: float = 7200.0
    merge_priority: float = 0.5
    diverge: Literal["fifo", "proportional"] = "fifo"
    max_queue_veh: float | None = None
    window_s: tuple[float, float] | None = None

    def __post_init__(self):
        if self.dt_s <= 0 or self.horizon_s <= 0:
            raise ConfigurationError("dt_s and horizon_s must be positive")
        if not 0 <= self.warmup_s < self.horizon_s:
            raise ConfigurationError("warmup_s must lie in [0, horizon_s)")
        for name in ("cycle_s", "cohort_s", "warmup_s", "horizon_s"):
            if not _is_multiple(getattr(self, name), self.dt_s):
                raise ConfigurationError(f"{name} must be an integer multiple of dt_s")
        if self.cycle_s <= 0 or self.cohort_s <= 0:
            raise ConfigurationError("cycle_s and cohort_s must be positive")
        if not 0 < self.merge_priority <= 1:
            raise ConfigurationError("merge_priority must lie in (0, 1]")
        if self.diverge not in ("fifo", "proportional"):
            raise ConfigurationError(f"unknown diverge rule {self.diverge!r}")
        if self.window_s is not None:
            t0, t1 = self.window_s
            if not self.warmup_s <= t0 < t1 <= self.horizon_s:
                raise ConfigurationError("evaluation window must lie within the post-warmup horizon")

    @property
    def evaluation_window(self) -> tuple[float, float]:
        return self.window_s or (self.warmup_s, self.horizon_s)


def _is_multiple(x: float, step: float) -> bool:
    q = x / step
    return abs(q - round(q)) < 1e-9


@dataclass
class SimState:
    """Mutable plant state.  ``veh`` is (cells x OD pairs), ``queue`` (origins x destinations)."""

    veh: np.ndarray
    queue: np.ndarray
    clock_s: float = 0.0
    entered: float = 0.0
    exited: float = 0.0
    lost: float = 0.0
    cum_in: np.ndarray | None = None
    cum_out: np.ndarray | None = None

    def copy(self) -> "SimState":
        return SimState(self.veh.copy(), self.queue.copy(), self.clock_s, self.entered,
                        self.exited, self.lost, self.cum_in.copy(), self.cum_out.copy())

    @property
    def on_mainline(self) -> float:
        return float(self.veh.sum())

    @property
    def in_queues(self) -> float:
        return float(self.queue.sum())

    def balance(self) -> float:
        """entered - exited - on mainline - queued; zero up to rounding."""
        return self.entered - self.exited - self.on_mainline - self.in_queues


@dataclass(frozen=True)
class MeasurementFrame:
    cycle_index: int
    occupancy: Mapping[str, float]  # on-ramp id -> detector occupancy over the cycle
    queue: Mapping[str, float]
    cell_occupancy: np.ndarray
    cell_density: np.ndarray
    cell_speed: np.ndarray


@dataclass(frozen=True)
class TripRecord:
    origin: str
    destination: str
    depart_s: float
    arrive_s: float  # nan while unfinished
    distance_km: float
    freeflow_time_s: float
    weight: float

    @property
    def finished(self) -> bool:
        return not math.isnan(self.arrive_s)

    @property
    def travel_time_s(self) -> float:
        return self.arrive_s - self.depart_s

    @property
    def delay_s(self) -> float:
        return self.travel_time_s - self.freeflow_time_s


class Plant:
    """Compiled corridor: index tables, OD routes and fundamental-diagram arrays."""

    def __init__(self, net: FreewayNetwork, demand: DemandProfile, params: SimParams):
        self.net = net
        self.demand = demand
        self.params = params
        cells = net.cells
        for i, c in enumerate(cells):
            if params.dt_s > c.max_stable_dt() + 1e-9:
                raise ConfigurationError(
                    f"dt_s={params.dt_s} violates the CFL bound {c.max_stable_dt():.3f}s in cell {i}")
        self.length_km = np.array([c.length_km for c in cells])
        self.lanes = np.array([c.lanes for c in cells], dtype=float)
        self.vf = np.array([c.free_speed_kmh for c in cells])
        self.w = np.array([c.backward_wave_kmh for c in cells])
        self.rho_jam = np.array([c.jam_density_vpkpl for c in cells])
        self.q_cap = np.array([c.capacity_vphpl for c in cells])
        self.rho_crit = self.q_cap / self.vf
        self.cap_drop = np.array([c.capacity_drop for c in cells])
        self.ring = net.topology == "ring"
        self.down = np.arange(1, net.n_cells + 1) % net.n_cells
        if not self.ring:
            self.down[-1] = net.n_cells - 1

        self.origins = [r.id for r in net.on_ramps]
        if not self.ring:
            self.origins.append(MAINLINE_IN)
        self.destinations = [r.id for r in net.off_ramps]
        if not self.ring:
            self.destinations.append(MAINLINE_OUT)
        unknown = set(demand.inflow_vph) - set(self.origins)
        if unknown:
            raise ConfigurationError(f"demand names unknown origins {sorted(unknown)}")
        missing = {r.id for r in net.off_ramps} - set(demand.split)
        if missing:
            raise ConfigurationError(f"no split fraction for off-ramps {sorted(missing)}")
        self.n_o, self.n_d = len(self.origins), len(self.destinations)
        self.n_cells = net.n_cells

        self.entry_cell = np.array([net.ramp(o).cell if o != MAINLINE_IN else 0
                                    for o in self.origins])
        self.exit_cell = np.array([net.ramp(d).cell if d != MAINLINE_OUT else self.n_cells - 1
                                   for d in self.destinations])
        self.od_split = self._route_choice()
        self.route_cells = self._route_cells()
        self.exit_mask = np.zeros((self.n_cells, self.n_o * self.n_d))
        for o in range(self.n_o):
            for d in range(self.n_d):
                self.exit_mask[self.exit_cell[d], o * self.n_d + d] = 1.0
        self.through_mask = 1.0 - self.exit_mask
        # on-ramp feeding each cell (-1 if none)
        self.feeder = np.full(self.n_cells, -1)
        for o, oid in enumerate(self.origins):
            if oid != MAINLINE_IN:
                self.feeder[self.entry_cell[o]] = o
        self.main_origin = self.origins.index(MAINLINE_IN) if not self.ring else -1
        self.sat = np.full(self.n_o, params.ramp_saturation_vph)
        if self.main_origin >= 0:
            self.sat[self.main_origin] = 1e12  # unmetered boundary; first cell limits it

        dist = np.zeros((self.n_o, self.n_d))
        fft = np.zeros((self.n_o, self.n_d))
        step_time = self.length_km / self.vf * 3600.0
        for o in range(self.n_o):
            for d in range(self.n_d):
                k = self.route_cells[o, d]
                idx = (self.entry_cell[o] + np.arange(k)) % self.n_cells
                dist[o, d] = self.length_km[idx].sum()
                fft[o, d] = step_time[idx].sum()
        self.route_km = dist
        self.freeflow_s = fft

    # -- route construction ---------------------------------------------------
    def _route_cells(self) -> np.ndarray:
        out = np.zeros((self.n_o, self.n_d), dtype=int)
        for o in range(self.n_o):
            for d in range(self.n_d):
                k = self.exit_cell[d] - self.entry_cell[o]
                out[o, d] = (k % self.n_cells) + 1 if self.ring else k + 1
        return out

    def _route_choice(self) -> np.ndarray:
        """OD probabilities implied by the exit fractions of the off-ramps passed."""
        offs = self.net.off_ramps
        split = np.zeros((self.n_o, self.n_d))
        for o in range(self.n_o):
            start = self.entry_cell[o]
            remaining = 1.0
            span = self.n_cells if self.ring else self.n_cells - start
            for s in range(span):
                c = (start + s) % self.n_cells
                for r in offs:
                    if r.cell == c:
                        p = remaining * self.demand.split[r.id]
                        split[o, self.destinations.index(r.id)] += p
                        remaining -= p
            if self.ring:
                total = split[o].sum()
                if total <= 0:
                    raise ConfigurationError("ring corridor needs at least one off-ramp with a positive split")
                split[o] /= total
            else:
                split[o, self.destinations.index(MAINLINE_OUT)] += remaining
        return split

    # -- state ----------------------------------------------------------------
    def initial_state(self) -> SimState:
        p = self.n_o * self.n_d
        return SimState(veh=np.zeros((self.n_cells, p)), queue=np.zeros((self.n_o, self.n_d)),
                        cum_in=np.zeros(p), cum_out=np.zeros(p))

    def density(self, state: SimState) -> np.ndarray:
        return state.veh.sum(axis=1) / (self.length_km * self.lanes)

    def speed(self, density: np.ndarray) -> np.ndarray:
        """Equilibrium speed on the fundamental diagram (free speed at zero density)."""
        flow = np.minimum(np.minimum(self.vf * density, self.q_cap),
                          self.w * (self.rho_jam - density))
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(density > 1e-12, flow / np.where(density > 1e-12, density, 1.0), self.vf)
        return np.clip(v, 0.0, self.vf)

    def rates_vector(self, metering: Mapping[str, float]) -> np.ndarray:
        r = np.ones(self.n_o)
        for o, oid in enumerate(self.origins):
            if oid in metering:
                r[o] = metering[oid]
        return r

    # -- dynamics -------------------------------------------------------------
    def step(self, state: SimState, metering: Mapping[str, float] | np.ndarray) -> SimState:
        """Advance one time step; returns a new state."""
        dt = self.params.dt_s
        h = dt / 3600.0
        t = state.clock_s
        rates = metering if isinstance(metering, np.ndarray) else self.rates_vector(metering)
        if np.any(rates < 0) or np.any(rates > 1) or not np.all(np.isfinite(rates)):
            raise ControllerContractError(f"metering rates outside [0, 1]: {rates}")

        n = state.veh
        ntot = n.sum(axis=1)
        rho = ntot / (self.length_km * self.lanes)
        cap = self.q_cap * self.lanes
        # a queue discharges below capacity, measured at the narrower side of the boundary
        congested = rho > self.rho_crit + 1e-12
        discharge = (1.0 - self.cap_drop) * np.minimum(cap, cap[self.down])
        send = np.minimum(self.vf * rho * self.lanes, np.where(congested, discharge, cap))
        recv = np.maximum(np.minimum(self.q_cap * self.lanes,
                                     self.w * (self.rho_jam - rho) * self.lanes), 0.0)
        n_exit = (n * self.exit_mask).sum(axis=1)
        n_thr = (n * self.through_mask).sum(axis=1)
        beta = np.divide(n_exit, ntot, out=np.zeros_like(ntot), where=ntot > 0)

        # arrivals join the queues first
        arrivals = np.array([self.demand.level(o, t) for o in self.origins]) * h
        if self.params.max_queue_veh is not None:
            room = np.maximum(self.params.max_queue_veh - state.queue.sum(axis=1), 0.0)
            admitted = np.minimum(arrivals, room)
            if self.main_origin >= 0:
                admitted[self.main_origin] = arrivals[self.main_origin]
        else:
            admitted = arrivals
        lost = float((arrivals - admitted).sum())
        new_arrivals = admitted[:, None] * self.od_split
        queue = state.queue + new_arrivals
        q_avail = queue.sum(axis=1)
        ramp_demand = np.minimum(q_avail / h, rates * self.sat)

        # upstream through demand for each cell
        through_dem = (1.0 - beta) * send
        if self.ring:
            main_dem = np.roll(through_dem, 1)
        else:
            main_dem = np.concatenate(([0.0], through_dem[:-1]))
            mo = self.main_origin
            main_dem[0] = min(ramp_demand[mo], self.q_cap[0] * self.lanes[0])

        ramp_dem_cell = np.where(self.feeder >= 0, ramp_demand[np.maximum(self.feeder, 0)], 0.0)
        ramp_flow = np.minimum(ramp_dem_cell,
                               np.maximum(self.params.merge_priority * recv, recv - main_dem))
        main_flow = np.minimum(main_dem, recv - ramp_flow)

        # diverge: through flow leaving cell i is the main flow into its successor
        if self.ring:
            through = np.roll(main_flow, -1)
        else:
            through = np.concatenate((main_flow[1:], [0.0]))
        if self.params.diverge == "fifo":
            thr_share = np.divide(n_thr, ntot, out=np.zeros_like(ntot), where=ntot > 0)
            total = np.where(n_thr > 0,
                             np.minimum(send, through / np.maximum(thr_share, 1e-300)), send)
            exit_flow = beta * total
        else:
            exit_flow = beta * send

        f_exit = np.minimum(np.divide(exit_flow * h, n_exit, out=np.zeros_like(n_exit),
                                      where=n_exit > 0), 1.0)
        f_thr = np.minimum(np.divide(through * h, n_thr, out=np.zeros_like(n_thr),
                                     where=n_thr > 0), 1.0)
        out_exit = n * self.exit_mask * f_exit[:, None]
        out_thr = n * self.through_mask * f_thr[:, None]
        veh = n - out_exit - out_thr
        if self.ring:
            veh += np.roll(out_thr, 1, axis=0)
        else:
            veh[1:] += out_thr[:-1]

        # queue discharge, composition-proportional
        discharged = np.zeros(self.n_o)
        for c in np.flatnonzero(self.feeder >= 0):
            discharged[self.feeder[c]] = ramp_flow[c] * h
        if self.main_origin >= 0:
            discharged[self.main_origin] = main_flow[0] * h
        frac = np.minimum(np.divide(discharged, q_avail, out=np.zeros_like(q_avail),
                                    where=q_avail > 0), 1.0)
        leaving = queue * frac[:, None]
        queue = queue - leaving
        for o in range(self.n_o):
            if leaving[o].any():
                veh[self.entry_cell[o], o * self.n_d:(o + 1) * self.n_d] += leaving[o]

        exits = out_exit.sum(axis=0)
        cum_in = state.cum_in + new_arrivals.ravel()
        cum_out = state.cum_out + exits
        return SimState(veh=veh, queue=queue, clock_s=t + dt,
                        entered=state.entered + float(new_arrivals.sum()),
                        exited=state.exited + float(exits.sum()),
                        lost=state.lost + lost, cum_in=cum_in, cum_out=cum_out)

    # -- trips ----------------------------------------------------------------
    def trips(self, times: np.ndarray, cum_in: np.ndarray, cum_out: np.ndarray,
              start_s: float) -> list[TripRecord]:
        """Cohort trip records from cumulative curves sampled at step boundaries.

        Departures are binned into ``cohort_s`` windows from ``start_s``; each
        bin yields one record for the arrived share (mean departure and mean
        arrival time) and one for the share still travelling at the end.
        """
        cohort = self.params.cohort_s
        edges = np.arange(start_s, times[-1] + 1e-9, cohort)
        if edges[-1] < times[-1] - 1e-9:
            edges = np.append(edges, times[-1])
        idx = np.rint(edges / self.params.dt_s).astype(int)
        records: list[TripRecord] = []
        for o, oid in enumerate(self.origins):
            for d, did in enumerate(self.destinations):
                p = o * self.n_d + d
                n_in, n_out = cum_in[:, p], cum_out[:, p]
                if n_in[-1] <= 0:
                    continue
                g_in = _inverse_integral(times, n_in)
                g_out = _inverse_integral(times, n_out)
                final_out = n_out[-1]
                km, fft = self.route_km[o, d], self.freeflow_s[o, d]
                for a, b in zip(n_in[idx[:-1]], n_in[idx[1:]]):
                    if b - a <= 1e-12:
                        continue
                    hi = min(b, final_out)
                    if hi - a > 1e-12:
                        w = hi - a
                        dep = (g_in(hi) - g_in(a)) / w
                        arr = (g_out(hi) - g_out(a)) / w
                        # CTM diffusion can let part of a cohort outrun free flow
                        arr = max(arr, dep + fft)
                        records.append(TripRecord(oid, did, dep, arr, km, fft, w))
                    lo = max(a, hi)
                    if b - lo > 1e-12:
                        dep = (g_in(b) - g_in(lo)) / (b - lo)
                        records.append(TripRecord(oid, did, dep, math.nan, km, fft, b - lo))
        return records


def _inverse_integral(t: np.ndarray, n: np.ndarray):
    """Return x -> integral_0^x of the inverse of the piecewise-linear curve (t, n)."""
    dn = np.diff(n)
    seg = dn * (t[:-1] + t[1:]) / 2.0
    acc = np.concatenate(([0.0], np.cumsum(seg)))

    def g(x: float) -> float:
        if x <= n[0]:
            return 0.0
        i = int(np.searchsorted(n, x, side="left")) - 1
        i = min(max(i, 0), len(dn) - 1)
        if dn[i] <= 0:
            return float(acc[i + 1])
        s = (x - n[i]) / dn[i]
        return float(acc[i] + (x - n[i]) * (t[i] + s * (t[i + 1] - t[i]) / 2.0))

    return g


def step(state: SimState, net: FreewayNetwork, demand: DemandProfile,
         metering: Mapping[str, float], dt: float, **params) -> SimState:
    """One plant step without keeping a compiled :class:`Plant` around."""
    horizon = max(state.clock_s + dt, dt)
    horizon = math.ceil(horizon / dt) * dt
    sp = SimParams(dt_s=dt, horizon_s=horizon, warmup_s=0.0, cycle_s=dt, cohort_s=dt, **params)
    return Plant(net, demand, sp).step(state, metering)


def measure(plant: Plant, density_samples: np.ndarray, state: SimState,
            cycle_index: int) -> MeasurementFrame:
    """Cycle-averaged detector occupancy (density over jam density, clamped to [0, 1])."""
    mean_rho = np.asarray(density_samples, dtype=float).mean(axis=0)
    occ_cells = np.clip(mean_rho / plant.rho_jam, 0.0, 1.0)
    net = plant.net
    occ = {r.id: float(occ_cells[r.detector_cell]) for r in net.on_ramps}
    queue = {}
    for o, oid in enumerate(plant.origins):
        if oid != MAINLINE_IN:
            queue[oid] = float(state.queue[o].sum())
    return MeasurementFrame(cycle_index=cycle_index, occupancy=occ, queue=queue,
                            cell_occupancy=occ_cells, cell_density=mean_rho,
                            cell_speed=plant.speed(mean_rho))


@dataclass
class SimulationResult:
    trips: list[TripRecord]
    times_s: np.ndarray
    speed: np.ndarray  # (steps, cells) km/h
    occupancy: np.ndarray  # (steps, cells)
    cell_positions_m: list[float]
    ramp_log: list[tuple]
    final_state: SimState
    max_balance_error: float = 0.0
    demand: DemandProfile | None = field(default=None, repr=False)


def run_simulation(network: FreewayNetwork, demand: DemandProfile, params: SimParams,
                   controller, seed: int, noise: float = 0.0) -> SimulationResult:
    """Warm up, then run the horizon under closed-loop control.

    At every cycle boundary the controller receives a :class:`MeasurementFrame`
    and returns the metering rates for the next cycle.  Only trips departing
    after the warmup are returned.
    """
    demand_run = demand.perturbed(seed, noise)
    plant = Plant(network, demand_run, params)
    state = plant.initial_state()
    rates = _checked(controller.reset(network), plant)
    n_steps = int(round(params.horizon_s / params.dt_s))
    per_cycle = int(round(params.cycle_s / params.dt_s))
    p = plant.n_o * plant.n_d
    cum_in = np.zeros((n_steps + 1, p))
    cum_out = np.zeros((n_steps + 1, p))
    times = np.arange(n_steps + 1) * params.dt_s
    speed = np.empty((n_steps, plant.n_cells))
    occ = np.empty((n_steps, plant.n_cells))
    window = np.empty((per_cycle, plant.n_cells))
    log: list[tuple] = []
    worst = 0.0
    cycle = 0
    for k in range(n_steps):
        state = plant.step(state, rates)
        cum_in[k + 1] = state.cum_in
        cum_out[k + 1] = state.cum_out
        rho = plant.density(state)
        speed[k] = plant.speed(rho)
        occ[k] = np.clip(rho / plant.rho_jam, 0.0, 1.0)
        window[k % per_cycle] = rho
        worst = max(worst, abs(state.balance()))
        if (k + 1) % per_cycle == 0:
            cycle += 1
            frame = measure(plant, window, state, cycle)
            decided = controller.decide(frame)
            rates = _checked(decided, plant)
            flows = getattr(controller, "last_flows", {})
            for rid in network.controlled_ramps:
                log.append((cycle, rid, frame.occupancy[rid], flows.get(rid, math.nan),
                            float(decided.get(rid, 1.0)), frame.queue[rid]))
    trips = plant.trips(times, cum_in, cum_out, params.warmup_s)
    return SimulationResult(trips=trips, times_s=times[1:], speed=speed, occupancy=occ,
                            cell_positions_m=network.cell_positions_m(), ramp_log=log,
                            final_state=state, max_balance_error=worst, demand=demand_run)


def _checked(rates: Mapping[str, float], plant: Plant) -> np.ndarray:
    for rid, r in rates.items():
        if not (0.0 <= r <= 1.0):
            raise ControllerContractError(f"controller returned rate {r!r} for ramp {rid!r}")
    return plant.rates_vector(rates)
