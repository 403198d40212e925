"""Ramp-metering controllers: no control, ALINEA, METALINE and C-EQ-ALINEA.

Flow commands are carried in veh/h.  Each controller exposes

* ``reset(net)`` -> initial metering rates, before any measurement exists;
* ``decide(frame)`` -> metering rates for the next cycle;
* ``last_flows`` -> the flow commands behind the most recent decision.

C-EQ-ALINEA runs as one :class:`RampAgent` per metered ramp.  A cycle has two
phases separated by a barrier: every agent computes its local ALINEA base
flow, then agents exchange base flows with their neighbours and add the
coordination correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .dynamics import MeasurementFrame
from .network import FreewayNetwork, max_consecutive_gap, neighborhood, proximity


class ControlError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    K: float = 7000.0  # veh/h per unit occupancy
    o_hat: float = 0.18
    K_c: float = 0.0
    m: int = 1
    norm_mode: Literal["global", "local"] = "global"
    gamma_s_per_veh: float = 0.5
    cycle_s: float = 60.0
    q_min: float = 200.0
    q_max: float = 2000.0
    r_min: float = 0.0
    r_max: float = 1.0

    def __post_init__(self):
        if self.K <= 0 or self.K_c < 0 or self.m < 1:
            raise ControlError("need K > 0, K_c >= 0 and m >= 1")
        if not 0 < self.o_hat < 1:
            raise ControlError("o_hat must lie in (0, 1)")
        if self.gamma_s_per_veh <= 0 or self.cycle_s <= 0:
            raise ControlError("gamma and cycle duration must be positive")
        if not 0 <= self.q_min <= self.q_max:
            raise ControlError("need 0 <= q_min <= q_max")
        if not 0 <= self.r_min < self.r_max <= 1:
            raise ControlError("need 0 <= r_min < r_max <= 1")
        if self.norm_mode not in ("global", "local"):
            raise ControlError(f"unknown norm_mode {self.norm_mode!r}")


def flow_to_rate(q: float, cfg: ControllerConfig) -> float:
    """Green share of the cycle needed to discharge ``q`` veh/h at ``gamma`` s/veh."""
    per_cycle = q * cfg.cycle_s / 3600.0
    r = per_cycle * cfg.gamma_s_per_veh / cfg.cycle_s
    return min(max(r, cfg.r_min), cfg.r_max)


def _clamp_flow(q: float, cfg: ControllerConfig) -> float:
    return min(max(q, cfg.q_min), cfg.q_max)


def alinea_base(q_prev: float, o: float, cfg: ControllerConfig) -> float:
    """Integral feedback on the occupancy error, clamped to the flow bounds."""
    return _clamp_flow(q_prev + cfg.K * (cfg.o_hat - o), cfg)


def unnormed_weights(net: FreewayNetwork, n: str, m: int,
                     norm_mode: str = "global") -> dict[str, float]:
    """``max(0, 1 - d / L_max)`` for each neighbour, with L_max set by ``norm_mode``."""
    nbrs = neighborhood(net, n, m)
    if not nbrs:
        return {}
    if norm_mode == "global":
        l_max = max_consecutive_gap(net, "global")
    elif norm_mode == "local":
        l_max = max_consecutive_gap(net, "local", n, m)
    else:
        raise ControlError(f"unknown norm_mode {norm_mode!r}")
    return {j: max(0.0, 1.0 - proximity(net, n, j) / l_max) for j in nbrs}


def compute_weights(net: FreewayNetwork, n: str, m: int,
                    norm_mode: str = "global") -> dict[str, float]:
    """Normalised proximity weights of ``n``'s neighbours.

    If no neighbour is closer than ``L_max`` every weight is zero, which
    switches coordination off for this ramp.
    """
    u = unnormed_weights(net, n, m, norm_mode)
    total = math.fsum(u.values())
    if total <= 0:
        return {j: 0.0 for j in u}
    return {j: uj / total for j, uj in u.items()}


@dataclass(frozen=True)
class NeighborMessage:
    sender: str
    base_flow_vph: float


def coordination_term(q_base: float, messages: Sequence[NeighborMessage],
                      weights: Mapping[str, float], K_c: float) -> float:
    """Pull towards the weighted neighbour average: K_c * (sum w_j q_j - q_base)."""
    for msg in messages:
        if msg.sender not in weights:
            raise ControlError(f"message from non-neighbour {msg.sender!r}")
    if K_c == 0 or not any(weights.values()):
        return 0.0
    # sum w_j (q_j - q_base) equals sum w_j q_j - q_base for normalised weights,
    # and is exactly zero at consensus
    return K_c * math.fsum(weights[msg.sender] * (msg.base_flow_vph - q_base) for msg in messages)


@dataclass
class RampAgent:
    """Per-ramp controller memory; reads only its own detector and neighbour messages."""

    ramp_id: str
    cfg: ControllerConfig
    neighbors: list[str] = field(default_factory=list)
    weights: dict[str, float] = field(default_factory=dict)
    q_prev: float = 0.0

    def base_flow(self, occupancy: float) -> float:
        return alinea_base(self.q_prev, occupancy, self.cfg)

    def message(self, base: float) -> NeighborMessage:
        return NeighborMessage(self.ramp_id, base)

    def coordinate(self, base: float, inbox: Sequence[NeighborMessage]) -> float:
        got = {msg.sender for msg in inbox}
        missing = [j for j in self.neighbors if j not in got]
        if missing:
            raise ControlError(f"ramp {self.ramp_id!r} missing messages from {missing}")
        q = base + coordination_term(base, inbox, self.weights, self.cfg.K_c)
        self.q_prev = _clamp_flow(q, self.cfg)
        return self.q_prev


def ceq_alinea_cycle(agents: Mapping[str, RampAgent], frame: MeasurementFrame,
                     cfg: ControllerConfig) -> dict[str, float]:
    """One synchronous C-EQ-ALINEA cycle over all agents; returns metering rates."""
    base = {rid: agent.base_flow(frame.occupancy[rid]) for rid, agent in agents.items()}
    outbox = {rid: agents[rid].message(b) for rid, b in base.items()}
    # barrier: every base flow exists before any agent coordinates
    rates = {}
    for rid, agent in agents.items():
        inbox = [outbox[j] for j in agent.neighbors]
        q = agent.coordinate(base[rid], inbox)
        rates[rid] = flow_to_rate(q, cfg)
    return rates


class NoControl:
    name = "no_control"

    def __init__(self, cfg: ControllerConfig | None = None):
        self.cfg = cfg or ControllerConfig()
        self.ramps: tuple[str, ...] = ()
        self.last_flows: dict[str, float] = {}

    def reset(self, net: FreewayNetwork) -> dict[str, float]:
        self.ramps = net.controlled_ramps
        return self.decide(None)

    def decide(self, frame) -> dict[str, float]:
        return no_control_cycle(self.ramps, self.cfg)


def no_control_cycle(ramps: Sequence[str], cfg: ControllerConfig) -> dict[str, float]:
    return {rid: cfg.r_max for rid in ramps}


class Alinea:
    """Isolated ALINEA on every metered ramp."""

    name = "alinea"

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg
        self.q: dict[str, float] = {}
        self.last_flows: dict[str, float] = {}

    def reset(self, net: FreewayNetwork) -> dict[str, float]:
        self.q = {rid: self.cfg.q_max for rid in net.controlled_ramps}
        self.last_flows = dict(self.q)
        return {rid: flow_to_rate(q, self.cfg) for rid, q in self.q.items()}

    def decide(self, frame: MeasurementFrame) -> dict[str, float]:
        for rid in self.q:
            self.q[rid] = alinea_base(self.q[rid], frame.occupancy[rid], self.cfg)
        self.last_flows = dict(self.q)
        return {rid: flow_to_rate(q, self.cfg) for rid, q in self.q.items()}


class CEqAlinea:
    """Decentralised, coordinated, equity-aware ALINEA."""

    name = "ceq_alinea"

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg
        self.agents: dict[str, RampAgent] = {}
        self.last_flows: dict[str, float] = {}

    def reset(self, net: FreewayNetwork) -> dict[str, float]:
        self.agents = {}
        for rid in net.controlled_ramps:
            nbrs = neighborhood(net, rid, self.cfg.m) if len(net.controlled_ramps) > 1 else []
            w = compute_weights(net, rid, self.cfg.m, self.cfg.norm_mode) if nbrs else {}
            self.agents[rid] = RampAgent(rid, self.cfg, nbrs, w, self.cfg.q_max)
        self.last_flows = {rid: a.q_prev for rid, a in self.agents.items()}
        return {rid: flow_to_rate(a.q_prev, self.cfg) for rid, a in self.agents.items()}

    def decide(self, frame: MeasurementFrame) -> dict[str, float]:
        rates = ceq_alinea_cycle(self.agents, frame, self.cfg)
        self.last_flows = {rid: a.q_prev for rid, a in self.agents.items()}
        return rates


@dataclass(frozen=True)
class MetalineConfig:
    """Gains for the multivariable law.

    Either give explicit ``K1`` (ramps x cells) and ``K2`` (ramps x ramps)
    matrices, or scalar ``k1``/``k2`` which expand to gains acting on each
    ramp's own detector cell and bottleneck occupancy.
    """

    base: ControllerConfig = field(default_factory=ControllerConfig)
    k1: float = 20000.0
    k2: float = 7000.0
    K1: tuple | None = None
    K2: tuple | None = None
    bottleneck_cells: tuple[int, ...] | None = None
    o_set: tuple[float, ...] | None = None


def metaline_gains(net: FreewayNetwork, cfg: MetalineConfig):
    ramps = net.controlled_ramps
    n_r, n_c = len(ramps), net.n_cells
    if cfg.K1 is not None:
        K1 = np.asarray(cfg.K1, dtype=float)
    else:
        K1 = np.zeros((n_r, n_c))
        for i, rid in enumerate(ramps):
            K1[i, net.ramp(rid).detector_cell] = cfg.k1
    K2 = np.asarray(cfg.K2, dtype=float) if cfg.K2 is not None else cfg.k2 * np.eye(n_r)
    cells = (np.asarray(cfg.bottleneck_cells, dtype=int) if cfg.bottleneck_cells is not None
             else np.array([net.ramp(r).detector_cell for r in ramps], dtype=int))
    o_set = (np.asarray(cfg.o_set, dtype=float) if cfg.o_set is not None
             else np.full(len(cells), cfg.base.o_hat))
    if K1.shape != (n_r, n_c):
        raise ControlError(f"K1 must be {n_r}x{n_c}, got {K1.shape}")
    if K2.shape != (n_r, len(cells)) or o_set.shape != (len(cells),):
        raise ControlError("K2, bottleneck cells and set-points have inconsistent sizes")
    return K1, K2, cells, o_set


def metaline_cycle(q_prev: np.ndarray, o: np.ndarray, o_prev: np.ndarray,
                   K1: np.ndarray, K2: np.ndarray, bottleneck_cells: np.ndarray,
                   o_set: np.ndarray, cfg: ControllerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vector update; returns (clamped flows, rates) in ramp order."""
    q = q_prev - K1 @ (o - o_prev) - K2 @ (o[bottleneck_cells] - o_set)
    q = np.clip(q, cfg.q_min, cfg.q_max)
    return q, np.array([flow_to_rate(x, cfg) for x in q])


class Metaline:
    name = "metaline"

    def __init__(self, cfg: MetalineConfig):
        self.cfg = cfg
        self.last_flows: dict[str, float] = {}

    def reset(self, net: FreewayNetwork) -> dict[str, float]:
        self.ramps = net.controlled_ramps
        self.K1, self.K2, self.cells, self.o_set = metaline_gains(net, self.cfg)
        self.q = np.full(len(self.ramps), self.cfg.base.q_max)
        self.o_prev = None
        self.last_flows = dict(zip(self.ramps, self.q.tolist()))
        return {rid: flow_to_rate(x, self.cfg.base) for rid, x in zip(self.ramps, self.q)}

    def decide(self, frame: MeasurementFrame) -> dict[str, float]:
        o = np.asarray(frame.cell_occupancy, dtype=float)
        o_prev = o if self.o_prev is None else self.o_prev
        self.q, rates = metaline_cycle(self.q, o, o_prev, self.K1, self.K2, self.cells,
                                       self.o_set, self.cfg.base)
        self.o_prev = o
        self.last_flows = dict(zip(self.ramps, self.q.tolist()))
        return dict(zip(self.ramps, rates.tolist()))


CONTROLLERS = ("no_control", "alinea", "metaline", "ceq_alinea")
