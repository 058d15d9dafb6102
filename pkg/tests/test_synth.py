import json
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from gridjac.errors import ConnectivityError, NonConvergence
from gridjac.grid import apply_switch_plan
from gridjac.spectral import estimate_ar_coefficient
from gridjac.synth import Scenario, ScenarioConfig, ar1_series, synthesize
from gridjac.topology import ModelBank, se_output


def test_ar1_long_run_statistics():
    x = ar1_series(0.9, 100_000, seed=5)
    assert x.var() == pytest.approx(1, abs=0.05)
    assert np.corrcoef(x[1:], x[:-1])[0, 1] == pytest.approx(0.9, abs=0.01)


def test_ar1_zero_is_white_gaussian():
    x = ar1_series(0.0, 20_000, seed=6)
    assert stats.kstest(x, "norm").pvalue > 1e-3
    assert abs(np.corrcoef(x[1:], x[:-1])[0, 1]) < 0.03


def test_ar1_seed_handling():
    assert np.array_equal(ar1_series(0.5, 50, seed=1), ar1_series(0.5, 50, seed=1))
    assert not np.array_equal(ar1_series(0.5, 50, seed=1), ar1_series(0.5, 50, seed=2))
    ss = np.random.SeedSequence(3)
    assert np.array_equal(ar1_series(0.5, 50, ss), ar1_series(0.5, 50, np.random.SeedSequence(3)))
    with pytest.raises(ValueError):
        ar1_series(1.0, 10)


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(switch_sample=0)
    with pytest.raises(ValueError):
        ScenarioConfig(switch_sample=2000)
    with pytest.raises(ValueError):
        ScenarioConfig(sigma_e=-1)
    with pytest.raises(ValueError):
        ScenarioConfig(ar_b=1.0)
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"sigma": 0.1})
    cfg = ScenarioConfig(seed=4, renewables_nodes=[20])
    assert ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_scenario_layout(scenario):
    assert isinstance(scenario, Scenario)
    assert scenario.z_ob.shape == (33, 1440)
    assert scenario.inputs.p.shape == (1440, 33)
    assert scenario.truth[:720] == ("M1",) * 720 and scenario.truth[720:] == ("M2",) * 720
    man = json.loads(scenario.to_json())
    assert man["config"]["seed"] == 7 and len(man["truth"]) == 1440


def test_reproducible(bank, scenario):
    again = synthesize(scenario.config, bank)
    assert np.array_equal(again.z_ob, scenario.z_ob)
    assert np.array_equal(again.inputs.p, scenario.inputs.p)
    other = synthesize(replace(scenario.config, seed=8), bank)
    assert not np.array_equal(other.z_ob, scenario.z_ob)


def test_streams_are_per_purpose(bank):
    a = synthesize(ScenarioConfig(n_samples=100, switch_sample=100, ar_b=0.5), bank)
    b = synthesize(ScenarioConfig(n_samples=100, switch_sample=100, ar_b=0.8), bank)
    # only the renewables streams depend on ar_b; load inputs elsewhere are untouched
    np.testing.assert_array_equal(a.inputs.q, b.inputs.q)
    np.testing.assert_allclose(a.z_ob - a.v, b.z_ob - b.v, atol=1e-15)


def test_noise_free_observations_are_power_flow_voltages(bank):
    sc = synthesize(ScenarioConfig(sigma_e=0.0, renewables_amplitude=0.0, switch_sample=300,
                                   n_samples=300), bank)
    assert np.array_equal(sc.z_ob, se_output(bank["M1"], sc.inputs).v)


def test_measurement_error_statistics(scenario):
    e = scenario.z_ob - scenario.v
    assert e.std() == pytest.approx(0.005, rel=0.02)
    assert abs(e.mean()) < 2e-4
    shifted = synthesize(replace(scenario.config, mu_e=0.01, n_samples=200, switch_sample=100),
                         ModelBank.from_dir(__import__("gridjac").topology.BANK33_DIR))
    assert (shifted.z_ob - shifted.v).mean() == pytest.approx(0.01, abs=1e-3)


def test_renewables_follow_ar_b(scenario):
    for k in range(scenario.renewables.shape[1]):
        b, _ = estimate_ar_coefficient(scenario.renewables[:, k])
        assert b == pytest.approx(0.9, abs=0.05)
    ids = [b.id for b in ModelBank.from_dir(__import__("gridjac").topology.BANK33_DIR)["M1"].buses]
    # renewables enter the scheduled inputs as generation at the flagged buses
    assert scenario.inputs.p[:, ids.index(31)].std() > 10 * scenario.inputs.p[:, ids.index(30)].std()


def test_failures(bank, g33):
    cut = apply_switch_plan(g33, [(1, 2)])
    with pytest.raises(ConnectivityError):
        synthesize(ScenarioConfig(grid_b="cut", n_samples=20, switch_sample=10),
                   ModelBank((("M1", g33), ("cut", cut))))
    heavy = replace(g33, buses=tuple(replace(b, p=60 * b.p, q=60 * b.q) for b in g33.buses))
    with pytest.raises(NonConvergence) as exc:
        synthesize(ScenarioConfig(grid_a="H", grid_b="H", n_samples=20, switch_sample=10),
                   ModelBank((("H", heavy),)))
    assert "sample 1 " in str(exc.value)
