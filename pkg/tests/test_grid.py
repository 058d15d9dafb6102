import json

import numpy as np
import pytest

from gridjac.errors import ConnectivityError, ParseError
from gridjac.grid import (Branch, Bus, BusKind, Grid, Status, apply_switch_plan, build_admittance,
                          load_network, parse_network, save_network, scale_branch_impedance,
                          serialize_network)

from conftest import random_grid, two_bus


def test_ieee33_shape(g33):
    assert g33.n == 33
    assert len(g33.branches) == 37
    assert sum(not br.closed for br in g33.branches) == 5
    assert g33.is_connected()
    # total scheduled load of the standard feeder: 3.715 MW, 2.3 Mvar on 10 MVA
    assert -sum(b.p for b in g33.buses) == pytest.approx(0.3715)
    assert -sum(b.q for b in g33.buses) == pytest.approx(0.23)


def test_admittance_structure(g33):
    y = build_admittance(g33)
    assert np.array_equal(y, y.T)
    np.testing.assert_allclose(y.sum(axis=1), 0, atol=1e-12)
    for br in g33.branches:
        i, j = g33.position(br.from_bus), g33.position(br.to_bus)
        assert y[i, j] == (br.y if br.closed else 0)


def test_open_branches_do_not_couple():
    g = two_bus()
    opened = apply_switch_plan(g, [(2, 1)])
    assert opened.branch(1, 2).status is Status.OPEN
    with pytest.raises(ConnectivityError):
        build_admittance(opened)


def test_switch_plan_toggles_back(g33):
    plan = [(28, 29), (25, 29)]
    m2 = apply_switch_plan(g33, plan)
    assert not m2.branch(28, 29).closed and m2.branch(25, 29).closed
    assert m2.is_connected()
    assert apply_switch_plan(m2, plan) == g33
    with pytest.raises(LookupError):
        apply_switch_plan(g33, [(1, 33)])


def test_scale_impedance(g33):
    g = scale_branch_impedance(g33, [(26, 27)], 2.0)
    assert 1 / g.branch(26, 27).y == pytest.approx(2 / g33.branch(26, 27).y)
    assert g.branch(2, 3) == g33.branch(2, 3)


def test_round_trip(g33, tmp_path):
    assert parse_network(serialize_network(g33)) == g33
    save_network(g33, tmp_path / "g.json")
    assert load_network(tmp_path / "g.json") == g33


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_random(seed):
    g = random_grid(np.random.default_rng(seed))
    assert parse_network(serialize_network(g)) == g


def test_parse_errors_carry_location(g33):
    with pytest.raises(ParseError) as exc:
        parse_network('{"buses": [\n  {"id": 1,, }]}')
    assert exc.value.location.startswith("2:")
    doc = json.loads(serialize_network(g33))
    doc["buses"][3]["kind"] = "generator"
    with pytest.raises(ParseError) as exc:
        parse_network(json.dumps(doc))
    assert "buses[3]" in exc.value.location
    doc = json.loads(serialize_network(g33))
    del doc["branches"][0]["g"]
    with pytest.raises(ParseError) as exc:
        parse_network(json.dumps(doc))
    assert "branches[0]" in exc.value.location


def test_grid_validation():
    slack = Bus(1, BusKind.SLACK, v_setpoint=1.0)
    with pytest.raises(ValueError):
        Grid((slack, Bus(1, BusKind.PQ)), ())
    with pytest.raises(ValueError):
        Grid((Bus(1, BusKind.PQ), Bus(2, BusKind.PQ)), ())
    with pytest.raises(ValueError):
        Grid((slack, Bus(2, BusKind.PQ)), (Branch(1, 3, 1.0, -1.0),))
    with pytest.raises(ValueError):
        Grid((slack, Bus(2, BusKind.PV)), ())
