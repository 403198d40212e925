from __future__ import annotations

from importlib.resources import files
from pathlib import Path

import pytest

from rampmeter.network import Cell, FreewayNetwork

SMOKE = Path(str(files("rampmeter") / "scenarios" / "smoke.toml"))


@pytest.fixture(scope="session")
def smoke_path() -> Path:
    return SMOKE


def ring(positions, length=32000.0, cell_m=500.0, offs=(), **cell_kw) -> FreewayNetwork:
    """Ring with on-ramps R0.. at ``positions`` and off-ramps X0.. at ``offs``."""
    ramps = [dict(id=f"R{i}", kind="on_ramp", position_m=p) for i, p in enumerate(positions)]
    ramps += [dict(id=f"X{i}", kind="off_ramp", position_m=p) for i, p in enumerate(offs)]
    n = int(round(length / cell_m))
    return FreewayNetwork.build(n, cell_m, ramps, "ring", cell=Cell(cell_m, **cell_kw))


def line(positions, length=10000.0, cell_m=500.0, offs=(), **cell_kw) -> FreewayNetwork:
    ramps = [dict(id=f"R{i}", kind="on_ramp", position_m=p) for i, p in enumerate(positions)]
    ramps += [dict(id=f"X{i}", kind="off_ramp", position_m=p) for i, p in enumerate(offs)]
    n = int(round(length / cell_m))
    return FreewayNetwork.build(n, cell_m, ramps, "line", cell=Cell(cell_m, **cell_kw))


# -- acceptance reporting: one PASS/FAIL line per criterion --------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        _CRITERIA[n] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title = _CRITERIA[n]
        terminalreporter.write_line(f"{status}  criterion {n}: {title}")
