"""Freeway corridor geometry: cells, ramps, neighbourhoods and inter-ramp distances.

A corridor is an ordered chain of uniform-length cells, either open (``line``)
or closed (``ring``).  On-ramps feed the cell that contains their position;
off-ramps drain the downstream end of the cell that contains theirs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

Topology = Literal["ring", "line"]
Scope = Literal["global", "local"]


class NetworkError(ValueError):
    """Raised for malformed corridors or invalid ramp queries."""


@dataclass(frozen=True)
class Cell:
    """Triangular (optionally trapezoidal) fundamental-diagram parameters of one cell.

    Units: density in veh/km/lane, flows in veh/h/lane, speeds in km/h.
    ``capacity_drop`` is the fractional loss of discharge capacity once the
    cell is over-critical; 0 gives the plain cell-transmission model.
    """

    length_m: float
    lanes: int = 3
    free_speed_kmh: float = 90.0
    jam_density_vpkpl: float = 150.0
    capacity_vphpl: float = 2000.0
    backward_wave_kmh: float = 20.0
    capacity_drop: float = 0.0

    def __post_init__(self):
        if self.length_m <= 0 or self.lanes < 1:
            raise NetworkError("cell length and lane count must be positive")
        if min(self.free_speed_kmh, self.jam_density_vpkpl,
               self.capacity_vphpl, self.backward_wave_kmh) <= 0:
            raise NetworkError("fundamental-diagram parameters must be positive")
        if not self.critical_density < self.jam_density_vpkpl:
            raise NetworkError(
                f"critical density {self.critical_density:.2f} must be below "
                f"jam density {self.jam_density_vpkpl}")
        # the congested branch must be able to carry capacity somewhere
        if self.capacity_vphpl > self.backward_wave_kmh * (
                self.jam_density_vpkpl - self.critical_density) + 1e-9:
            raise NetworkError("capacity exceeds the congested branch at critical density")
        if not 0.0 <= self.capacity_drop < 1.0:
            raise NetworkError("capacity_drop must lie in [0, 1)")

    @property
    def critical_density(self) -> float:
        return self.capacity_vphpl / self.free_speed_kmh

    @property
    def length_km(self) -> float:
        return self.length_m / 1000.0

    def max_stable_dt(self) -> float:
        """Largest step (s) satisfying the CFL bound for both wave speeds."""
        fastest = max(self.free_speed_kmh, self.backward_wave_kmh) / 3.6
        return self.length_m / fastest


@dataclass(frozen=True)
class RampNode:
    id: str
    kind: Literal["on_ramp", "off_ramp"]
    position_m: float
    cell: int
    detector_cell: int
    metered: bool = True

    @property
    def is_on_ramp(self) -> bool:
        return self.kind == "on_ramp"


@dataclass(frozen=True)
class FreewayNetwork:
    cells: tuple[Cell, ...]
    ramps: tuple[RampNode, ...]
    topology: Topology = "ring"
    cell_length_m: float = 500.0
    _by_id: dict = field(init=False, repr=False, compare=False)
    _controlled: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.topology not in ("ring", "line"):
            raise NetworkError(f"unknown topology {self.topology!r}")
        if not self.cells:
            raise NetworkError("network needs at least one cell")
        if any(abs(c.length_m - self.cell_length_m) > 1e-9 for c in self.cells):
            raise NetworkError("all cells must share cell_length_m")
        by_id = {}
        fed = set()
        for r in self.ramps:
            if r.id in by_id:
                raise NetworkError(f"duplicate ramp id {r.id!r}")
            by_id[r.id] = r
            if not 0.0 <= r.position_m < self.total_length_m:
                raise NetworkError(f"ramp {r.id!r} position {r.position_m} outside corridor")
            if r.cell != int(r.position_m // self.cell_length_m):
                raise NetworkError(f"ramp {r.id!r} attached to wrong cell")
            if r.kind == "on_ramp":
                if r.cell in fed:
                    raise NetworkError(f"two on-ramps feed cell {r.cell}")
                fed.add(r.cell)
            elif r.kind == "off_ramp":
                if r.metered:
                    raise NetworkError(f"off-ramp {r.id!r} cannot be metered")
            else:
                raise NetworkError(f"ramp {r.id!r} has unknown kind {r.kind!r}")
        object.__setattr__(self, "_by_id", by_id)
        controlled = sorted((r for r in self.ramps if r.is_on_ramp and r.metered),
                            key=lambda r: (r.position_m, r.id))
        object.__setattr__(self, "_controlled", tuple(r.id for r in controlled))

    @classmethod
    def build(cls, n_cells: int, cell_length_m: float, ramps: Sequence[dict],
              topology: Topology = "ring", detector_offset_cells: int = 0,
              cell: Cell | None = None, cell_lanes: Sequence[int] | None = None):
        """Assemble a uniform corridor from ramp descriptions.

        Each ramp dict needs ``id``, ``kind`` and ``position_m``; ``metered``
        defaults to True for on-ramps.
        """
        base = cell or Cell(length_m=cell_length_m)
        if cell_lanes is not None and len(cell_lanes) != n_cells:
            raise NetworkError("cell_lanes must list one lane count per cell")
        cells = tuple(
            base if cell_lanes is None else _with_lanes(base, cell_lanes[i])
            for i in range(n_cells))
        nodes = []
        for spec in ramps:
            idx = int(spec["position_m"] // cell_length_m)
            kind = spec["kind"]
            det = idx
            if kind == "on_ramp":
                det = idx + detector_offset_cells
                if topology == "ring":
                    det %= n_cells
                elif det >= n_cells:
                    det = n_cells - 1
            nodes.append(RampNode(
                id=str(spec["id"]), kind=kind, position_m=float(spec["position_m"]),
                cell=idx, detector_cell=det,
                metered=bool(spec.get("metered", kind == "on_ramp"))))
        return cls(cells=cells, ramps=tuple(nodes), topology=topology,
                   cell_length_m=cell_length_m)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def total_length_m(self) -> float:
        return self.n_cells * self.cell_length_m

    def ramp(self, ramp_id: str) -> RampNode:
        try:
            return self._by_id[ramp_id]
        except KeyError:
            raise NetworkError(f"unknown ramp id {ramp_id!r}") from None

    @property
    def on_ramps(self) -> tuple[RampNode, ...]:
        return tuple(sorted((r for r in self.ramps if r.is_on_ramp),
                            key=lambda r: (r.position_m, r.id)))

    @property
    def off_ramps(self) -> tuple[RampNode, ...]:
        return tuple(sorted((r for r in self.ramps if not r.is_on_ramp),
                            key=lambda r: (r.position_m, r.id)))

    @property
    def controlled_ramps(self) -> tuple[str, ...]:
        """Metered on-ramp ids in travel order; the agents that coordinate."""
        return self._controlled

    def cell_positions_m(self) -> list[float]:
        return [i * self.cell_length_m for i in range(self.n_cells)]

    def _controlled_index(self, ramp_id: str) -> int:
        node = self.ramp(ramp_id)
        if not node.is_on_ramp:
            raise NetworkError(f"{ramp_id!r} is an off-ramp")
        if not node.metered:
            raise NetworkError(f"{ramp_id!r} is not metered")
        return self._controlled.index(ramp_id)


def _with_lanes(cell: Cell, lanes: int) -> Cell:
    return Cell(length_m=cell.length_m, lanes=int(lanes), free_speed_kmh=cell.free_speed_kmh,
                jam_density_vpkpl=cell.jam_density_vpkpl, capacity_vphpl=cell.capacity_vphpl,
                backward_wave_kmh=cell.backward_wave_kmh, capacity_drop=cell.capacity_drop)


def neighborhood(net: FreewayNetwork, n: str, m: int) -> list[str]:
    """Up to ``m`` nearest upstream then ``m`` nearest downstream metered on-ramps.

    Upstream neighbours come first (nearest first), then downstream ones.  On a
    ring a ramp reachable both ways is listed once, on the side where it is
    closer (upstream on a tie).
    """
    if m < 1:
        raise NetworkError("neighbourhood size m must be >= 1")
    order = net.controlled_ramps
    i = net._controlled_index(n)
    k = len(order)
    if net.topology == "line":
        up = [order[i - s] for s in range(1, m + 1) if i - s >= 0]
        down = [order[i + s] for s in range(1, m + 1) if i + s < k]
        return up + down
    steps = {}
    for s in range(1, m + 1):
        for side, j in (("up", (i - s) % k), ("down", (i + s) % k)):
            if j == i:
                continue
            d = ramp_distance(net, order[j], n) if side == "up" else ramp_distance(net, n, order[j])
            prev = steps.get(j)
            if prev is None or d < prev[1]:
                steps[j] = (side, d, s)
    up = sorted((v[2], order[j]) for j, v in steps.items() if v[0] == "up")
    down = sorted((v[2], order[j]) for j, v in steps.items() if v[0] == "down")
    return [rid for _, rid in up] + [rid for _, rid in down]


def ramp_distance(net: FreewayNetwork, n: str, j: str) -> float:
    """Corridor distance in metres from ramp ``n`` to ramp ``j``.

    On a line this is the absolute position difference.  On a ring it is the
    arc travelled downstream from ``n`` until ``j`` is reached, so
    ``ramp_distance(n, j) + ramp_distance(j, n)`` is the ring length.
    """
    a, b = net.ramp(n), net.ramp(j)
    if not (a.is_on_ramp and b.is_on_ramp):
        raise NetworkError("distances are defined between on-ramps only")
    if n == j:
        raise NetworkError("distance from a ramp to itself is undefined")
    if net.topology == "line":
        return abs(b.position_m - a.position_m)
    arc = (b.position_m - a.position_m) % net.total_length_m
    return arc if arc > 0 else net.total_length_m


def proximity(net: FreewayNetwork, n: str, j: str) -> float:
    """Symmetric spacing used for coordination weights: the shorter way round."""
    if net.topology == "line":
        return ramp_distance(net, n, j)
    return min(ramp_distance(net, n, j), ramp_distance(net, j, n))


def max_consecutive_gap(net: FreewayNetwork, scope: Scope = "global",
                        n: str | None = None, m: int | None = None) -> float:
    """Largest spacing between consecutive metered on-ramps.

    ``scope="global"`` looks at the whole corridor; ``scope="local"`` only at
    consecutive pairs inside ``{n} + neighborhood(n, m)``.
    """
    order = net.controlled_ramps
    k = len(order)
    if scope == "global":
        members = set(range(k))
    elif scope == "local":
        if n is None or m is None:
            raise NetworkError("local scope needs a ramp and a neighbourhood size")
        members = {net._controlled_index(n)}
        members.update(order.index(r) for r in neighborhood(net, n, m))
    else:
        raise NetworkError(f"unknown scope {scope!r}")
    if len(members) < 2:
        raise NetworkError("fewer than two on-ramps in scope")
    if net.topology == "line":
        pairs = [(i, i + 1) for i in range(k - 1)]
    else:
        pairs = [(i, (i + 1) % k) for i in range(k)]
    gaps = [ramp_distance(net, order[a], order[b])
            for a, b in pairs if a in members and b in members]
    if not gaps:
        raise NetworkError("no consecutive on-ramp pair in scope")
    return max(gaps)
