from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

import feederguard.powerflow as pf
from feederguard.netmodel import Branch, Bus, NetworkCase, resolve_case

DATA = Path(__file__).parent / "data"

# Slack voltage under which the published 33-bus tables were produced.
REPLICATION_SLACK = 0.99
REFERENCE_DG = [(30, 852.0), (24, 765.0), (14, 718.0)]

BALANCE_TOL = 1e-6


def random_feeder(rng: np.random.Generator, n_bus: int, load_scale: float = 1.0) -> NetworkCase:
    """Random radial feeder with shuffled bus order and random branch orientation."""
    ids = list(range(1, n_bus + 1))
    branches = []
    for k in range(2, n_bus + 1):
        parent = int(rng.integers(1, k))
        a, b = (parent, k) if rng.random() < 0.5 else (k, parent)
        branches.append(Branch(a, b, float(rng.uniform(0.05, 0.6)), float(rng.uniform(0.05, 0.6))))
    rng.shuffle(branches)
    buses = [
        Bus(i, float(rng.uniform(0, 150)) * load_scale, float(rng.uniform(0, 100)) * load_scale, i == 1)
        for i in ids
    ]
    rng.shuffle(buses)
    return NetworkCase(buses=tuple(buses), branches=tuple(branches), name=f"random{n_bus}")


@pytest.fixture(scope="session")
def ieee33() -> NetworkCase:
    return resolve_case("ieee33")


@pytest.fixture(scope="session")
def ieee33_replication(ieee33) -> NetworkCase:
    return ieee33.with_slack_voltage(REPLICATION_SLACK)


@pytest.fixture(scope="session")
def reported() -> dict:
    return json.loads((DATA / "reported_values.json").read_text())


def make_toy2(p_kw=100.0, q_kvar=0.0, r_ohm=0.5, x_ohm=0.5, **kw) -> NetworkCase:
    return NetworkCase(
        buses=(Bus(1, is_slack=True), Bus(2, p_kw, q_kvar)),
        branches=(Branch(1, 2, r_ohm, x_ohm),),
        **kw,
    )


@pytest.fixture
def toy2() -> NetworkCase:
    return make_toy2()


def make_toy6() -> NetworkCase:
    # 1-2-3-4 trunk with laterals 2-5 and 3-6
    buses = (
        Bus(1, is_slack=True),
        Bus(2, 400.0, 200.0),
        Bus(3, 300.0, 150.0),
        Bus(4, 600.0, 300.0),
        Bus(5, 500.0, 250.0),
        Bus(6, 350.0, 200.0),
    )
    branches = (
        Branch(1, 2, 0.40, 0.30),
        Branch(2, 3, 0.80, 0.60),
        Branch(3, 4, 1.20, 0.90),
        Branch(2, 5, 1.00, 0.80),
        Branch(3, 6, 0.70, 0.70),
    )
    return NetworkCase(buses=buses, branches=branches, name="toy6")


@pytest.fixture
def toy6() -> NetworkCase:
    return make_toy6()


# -- acceptance reporting ----------------------------------------------------


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    lines = request.config._acceptance_lines

    def record(number: int, title: str, passed: bool, detail: str = ""):
        status = "PASS" if passed else "FAIL"
        lines.append(f"[{status}] criterion {number:2d}: {title}" + (f" -- {detail}" if detail else ""))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


# -- power balance on every solution built by any test ------------------------


@pytest.fixture(autouse=True)
def _power_balance_guard(monkeypatch):
    """Check slack + DG - loads - losses on every converged solution a test builds."""
    seen = []
    original = pf.RadialSweep.solution

    def checked(self, case, result, column=0, tolerance=pf.DEFAULT_TOLERANCE):
        sol = original(self, case, result, column, tolerance)
        if sol.converged:
            seen.append(sol.power_balance_mismatch())
        return sol

    monkeypatch.setattr(pf.RadialSweep, "solution", checked)
    yield seen
    bad = [m for m in seen if abs(m.real) >= BALANCE_TOL or abs(m.imag) >= BALANCE_TOL]
    assert not bad, f"power balance violated on {len(bad)} solution(s), worst {max(bad, key=abs)}"
