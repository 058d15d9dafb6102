import numpy as np
import pytest

from gridjac.grid import Branch, Bus, BusKind, Grid, ieee33
from gridjac.powerflow import PowerFlowSpec, newton_raphson_solve
from gridjac.topology import bank33


@pytest.fixture(scope="session")
def g33():
    return ieee33()


@pytest.fixture(scope="session")
def bank():
    return bank33()


@pytest.fixture(scope="session")
def base_state(g33):
    state, _ = newton_raphson_solve(g33, PowerFlowSpec.from_grid(g33))
    return state


def two_bus(p=-0.5, q=-0.2, r=0.02, x=0.06, shunt=0j):
    y = 1 / complex(r, x)
    return Grid(
        (Bus(1, BusKind.SLACK, v_setpoint=1.0), Bus(2, BusKind.PQ, p=p, q=q,
                                                     g_shunt=shunt.real, b_shunt=shunt.imag)),
        (Branch(1, 2, y.real, y.imag),),
    )


def random_grid(rng, n=6, n_pv=1, shunts=True):
    """Random connected grid: a random spanning tree plus one extra branch."""
    buses = [Bus(1, BusKind.SLACK, v_setpoint=1.0 + 0.02 * rng.standard_normal())]
    for i in range(2, n + 1):
        kind = BusKind.PV if i <= 1 + n_pv else BusKind.PQ
        buses.append(Bus(i, kind, p=-0.1 * rng.random(), q=-0.05 * rng.random(),
                         v_setpoint=1.0 if kind is BusKind.PV else None,
                         g_shunt=0.01 * rng.random() if shunts else 0.0,
                         b_shunt=0.02 * rng.standard_normal() if shunts else 0.0))
    branches, pairs = [], set()
    for i in range(2, n + 1):
        j = int(rng.integers(1, i))
        pairs.add((j, i))
    a, b = sorted(rng.choice(np.arange(1, n + 1), 2, replace=False))
    pairs.add((int(a), int(b)))
    for a, b in sorted(pairs):
        y = 1 / complex(0.01 + 0.05 * rng.random(), 0.02 + 0.1 * rng.random())
        branches.append(Branch(a, b, y.real, y.imag))
    return Grid(tuple(buses), tuple(branches))


@pytest.fixture(scope="session")
def scenario(bank):
    from gridjac.synth import ScenarioConfig, synthesize
    return synthesize(ScenarioConfig(seed=7), bank)


ACCEPTANCE_LINES = []


def record(number: int, title: str, ok: bool, detail: str):
    """Log one acceptance verdict; the lines are repeated in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
