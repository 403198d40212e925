import itertools

import pytest
from hypothesis import given, settings, strategies as st

from rampmeter.network import (Cell, FreewayNetwork, NetworkError, max_consecutive_gap,
                               neighborhood, proximity, ramp_distance)

from conftest import line, ring


def test_ring_neighborhood_symmetric():
    net = ring([1000, 9000, 17000, 25000])
    assert neighborhood(net, "R1", 1) == ["R0", "R2"]


def test_line_neighborhood_truncated_at_ends():
    net = line([1000, 4000, 7000])
    assert neighborhood(net, "R0", 2) == ["R1", "R2"]
    assert neighborhood(net, "R2", 1) == ["R1"]


def test_ring_of_eleven_has_six_neighbours_for_m3():
    net = ring([i * 2900 + 100 for i in range(11)])
    for rid in net.controlled_ramps:
        nb = neighborhood(net, rid, 3)
        assert len(nb) == 6 and rid not in nb and len(set(nb)) == 6


def test_small_ring_returns_every_other_ramp_once():
    net = ring([1000, 9000, 17000])
    for rid in net.controlled_ramps:
        assert sorted(neighborhood(net, rid, 3)) == sorted(set(net.controlled_ramps) - {rid})


def test_neighborhood_order_upstream_first():
    net = ring([i * 4000 + 100 for i in range(8)])
    assert neighborhood(net, "R4", 2) == ["R3", "R2", "R5", "R6"]


def test_off_ramps_excluded_from_neighborhood():
    net = ring([1000, 9000, 17000, 25000], offs=[5000, 13000])
    for rid in net.controlled_ramps:
        assert all(j.startswith("R") for j in neighborhood(net, rid, 3))


def test_neighborhood_errors():
    net = ring([1000, 9000], offs=[5000])
    with pytest.raises(NetworkError):
        neighborhood(net, "X0", 1)
    with pytest.raises(NetworkError):
        neighborhood(net, "nope", 1)
    with pytest.raises(NetworkError):
        neighborhood(net, "R0", 0)


def test_distance_examples():
    assert ramp_distance(line([1000, 3500]), "R0", "R1") == 2500
    net = ring([1000, 31000], length=32000)
    assert proximity(net, "R0", "R1") == 2000
    assert ramp_distance(net, "R1", "R0") == 2000
    assert ramp_distance(net, "R0", "R1") == 30000


def test_distance_to_self_is_an_error():
    net = ring([1000, 9000])
    with pytest.raises(NetworkError):
        ramp_distance(net, "R0", "R0")


def test_max_gap_examples():
    uniform = ring([i * 4000 + 10 for i in range(8)])
    assert max_consecutive_gap(uniform, "global") == 4000
    # gaps 2000, 3000, 5000
    net = line([0, 2000, 5000, 10000], length=10500)
    assert max_consecutive_gap(net, "global") == 5000
    assert max_consecutive_gap(net, "local", "R1", 1) == 3000


def test_max_gap_needs_two_ramps():
    with pytest.raises(NetworkError):
        max_consecutive_gap(ring([1000]), "global")


@pytest.mark.parametrize("kw, msg", [
    (dict(ramps=[dict(id="A", kind="on_ramp", position_m=100), dict(id="A", kind="on_ramp", position_m=900)]), "duplicate"),
    (dict(ramps=[dict(id="A", kind="on_ramp", position_m=100), dict(id="B", kind="on_ramp", position_m=200)]), "two on-ramps"),
    (dict(ramps=[dict(id="A", kind="on_ramp", position_m=5000)]), "outside"),
    (dict(ramps=[dict(id="X", kind="off_ramp", position_m=100, metered=True)]), "metered"),
])
def test_network_invariants(kw, msg):
    with pytest.raises(NetworkError, match=msg):
        FreewayNetwork.build(4, 500.0, kw["ramps"], "ring")


def test_cell_fd_consistency():
    with pytest.raises(ValueError):
        Cell(500, free_speed_kmh=10, capacity_vphpl=2000, jam_density_vpkpl=150)
    c = Cell(500)
    assert c.critical_density < c.jam_density_vpkpl


def test_detector_offset_wraps_on_ring():
    net = FreewayNetwork.build(8, 500.0, [dict(id="A", kind="on_ramp", position_m=3900)], "ring",
                               detector_offset_cells=2)
    assert net.ramp("A").cell == 7 and net.ramp("A").detector_cell == 1


positions = st.lists(st.integers(0, 63), min_size=3, max_size=12, unique=True)


@settings(max_examples=60, deadline=None)
@given(positions, st.integers(1, 4))
def test_neighborhood_nested_and_ring_count(cells, m):
    net = ring([c * 500 + 250 for c in cells])
    k = len(cells)
    for rid in net.controlled_ramps:
        small, big = neighborhood(net, rid, m), neighborhood(net, rid, m + 1)
        assert set(small) <= set(big)
        assert len(small) == min(2 * m, k - 1)


@settings(max_examples=60, deadline=None)
@given(positions)
def test_ring_arcs_sum_to_length(cells):
    net = ring([c * 500 + 250 for c in cells])
    for a, b in itertools.permutations(net.controlled_ramps, 2):
        assert ramp_distance(net, a, b) + ramp_distance(net, b, a) == pytest.approx(net.total_length_m)
        assert ramp_distance(net, a, b) > 0


@settings(max_examples=60, deadline=None)
@given(positions, st.integers(1, 3))
def test_local_gap_never_exceeds_global(cells, m):
    net = ring([c * 500 + 250 for c in cells])
    g = max_consecutive_gap(net, "global")
    # independent oracle: sorted positions, wrap gap
    pos = sorted(c * 500 + 250 for c in cells)
    gaps = [b - a for a, b in zip(pos, pos[1:])] + [pos[0] + 32000 - pos[-1]]
    assert g == pytest.approx(max(gaps))
    for rid in net.controlled_ramps:
        assert max_consecutive_gap(net, "local", rid, m) <= g
