import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rampmeter.dynamics import TripRecord
from rampmeter.io import (RAMP_LOG_COLUMNS, TRIP_COLUMNS, cell, read_matrix, read_table,
                          read_trips, write_ramp_log, write_spacetime, write_table, write_trips)

finite = st.floats(0, 1e5, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["R1", "mainline_in"]), finite, finite | st.just(math.nan),
                          finite, finite, st.floats(1e-6, 50)), max_size=10))
def test_trips_round_trip_exactly(tmp_path_factory, rows):
    trips = [TripRecord(o, "X1", d, a, km, ff, w) for o, d, a, km, ff, w in rows]
    p = tmp_path_factory.mktemp("t") / "trips.csv"
    write_trips(p, trips)
    back = read_trips(p)
    assert len(back) == len(trips)
    for a, b in zip(trips, back):
        assert (a.origin, a.depart_s, a.distance_km, a.weight) == (b.origin, b.depart_s,
                                                                 b.distance_km, b.weight)
        assert a.arrive_s == b.arrive_s or (math.isnan(a.arrive_s) and math.isnan(b.arrive_s))


def test_trip_header_checked(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="columns"):
        read_trips(p)
    write_trips(p, [])
    assert p.read_text().strip() == ",".join(TRIP_COLUMNS)


def test_ramp_log_columns(tmp_path):
    p = tmp_path / "log.csv"
    write_ramp_log(p, [(0, "R1", 0.1, 1500.0, 0.75, 3.5)])
    rows = read_table(p)
    assert tuple(rows[0]) == RAMP_LOG_COLUMNS
    assert rows[0]["rate"] == "0.75" and rows[0]["cycle_index"] == "0"


def test_spacetime_round_trip(tmp_path):
    p = tmp_path / "st.csv"
    m = np.arange(6, dtype=float).reshape(2, 3) / 7
    write_spacetime(p, [0.0, 60.0], [250.0, 750.0, 1250.0], m)
    assert p.read_text().splitlines()[0] == "time_s,250.0,750.0,1250.0"
    t, x, back = read_matrix(p)
    assert list(t) == [0.0, 60.0] and list(x) == [250.0, 750.0, 1250.0]
    assert np.array_equal(back, m)


def test_table_cells(tmp_path):
    assert cell(282.75, 1.234, 1) == "282.8 (1.2)"
    assert cell(math.nan, 0.0, 1) == "n/a"
    p = tmp_path / "t.csv"
    write_table(p, ["metric", "alinea"], [["Gini", "0.2354 (0.0000)"]])
    assert read_table(p) == [{"metric": "Gini", "alinea": "0.2354 (0.0000)"}]
