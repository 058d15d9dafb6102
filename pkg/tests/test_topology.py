import json
import logging

import numpy as np
import pytest

from gridjac.errors import DimensionError, RangeError, TIFailure
from gridjac.grid import Bus, Grid
from gridjac.synth import ScenarioConfig, synthesize
from gridjac.topology import (PERIODS, DifferenceMatrix, InputSeries, ModelBank, TIConfig,
                              autocorr_profile, difference, match_model, se_output,
                              standardize_rows, window, window_columns, worker_count)


def test_periods():
    assert window_columns(1440, "T1").tolist() == list(range(720))
    assert window_columns(1440, "t5").tolist() == list(range(720, 1440))
    cover = set()
    for name in PERIODS:
        cols = window_columns(1440, name)
        assert cols.size == 720
        cover |= set(cols.tolist())
    assert cover == set(range(1440))
    assert set(window_columns(1440, "T1")) | set(window_columns(1440, "T5")) == cover
    with pytest.raises(RangeError):
        window_columns(1440, (1, 1441))
    with pytest.raises(RangeError):
        window_columns(1440, "T9")
    with pytest.raises(RangeError):
        window_columns(1440, (5, 0))


def test_window_keeps_column_labels():
    x = difference(np.arange(20.0).reshape(2, 10), np.zeros((2, 10)), "M")
    w = window(x, (3, 4))
    assert isinstance(w, DifferenceMatrix)
    assert w.columns.tolist() == [2, 3, 4, 5]
    assert w.data[0].tolist() == [2.0, 3.0, 4.0, 5.0]


def test_difference():
    z = np.random.default_rng(0).random((3, 8))
    assert np.array_equal(difference(z, z).data, np.zeros((3, 8)))
    assert np.allclose(difference(z, z - 1).data, 1)
    with pytest.raises(DimensionError):
        difference(z, z[:, :4])


def test_autocorr_profile_degenerate_rows():
    assert np.isnan(autocorr_profile(np.zeros((4, 50)))).all()


def test_standardize_rows():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 40)) * [[1], [5], [0]] + 2
    s = standardize_rows(x)
    np.testing.assert_allclose(s[:2].mean(axis=1), 0, atol=1e-15)
    np.testing.assert_allclose(s[:2].std(axis=1), 1)
    assert np.all(s[2] == 0)


def test_model_bank_validation(tmp_path, g33):
    with pytest.raises(ValueError):
        ModelBank(())
    with pytest.raises(ValueError):
        ModelBank((("A", g33), ("A", g33)))
    with pytest.raises(ValueError):
        ModelBank.from_dir(tmp_path)


def test_bundled_bank(bank, g33):
    assert bank.labels == ["M1", "M2", "M3"]
    assert bank["M1"] == g33
    m2, m3 = bank["M2"], bank["M3"]
    assert not m2.branch(28, 29).closed and m2.branch(25, 29).closed
    assert 1 / m3.branch(27, 28).y == pytest.approx(1.5 / g33.branch(27, 28).y)
    assert all(g.is_connected() for _, g in bank.models)


def test_se_output_reproduces_noise_free_observations(bank):
    sc = synthesize(ScenarioConfig(sigma_e=0.0, n_samples=200, switch_sample=200), bank)
    se = se_output(bank["M1"], sc.inputs)
    assert se.failed.size == 0
    np.testing.assert_allclose(se.v, sc.z_ob, atol=1e-9)


def test_zero_load_rows_are_flat(g33):
    empty = Grid(tuple(Bus(b.id, b.kind, v_setpoint=b.v_setpoint) for b in g33.buses), g33.branches)
    se = se_output(empty, InputSeries(np.zeros((5, 33)), np.zeros((5, 33))))
    assert np.allclose(se.v, 1)


def test_matched_rows_are_white_and_mismatch_is_not(scenario, bank):
    t1 = window_columns(1440, "T1")
    inputs = scenario.inputs.columns(t1)
    ids = [b.id for b in bank["M1"].buses]
    bhat = {}
    for label in ("M1", "M2"):
        x = scenario.z_ob[:, t1] - se_output(bank[label], inputs).v
        bhat[label] = autocorr_profile(x)
    assert np.abs(bhat["M1"]).max() < 0.1
    # bus 31 sits downstream of the reconfigured branches, bus 20 does not
    assert bhat["M2"][ids.index(31)] > 0.2
    assert np.median(bhat["M2"]) > 0.3


def test_match_switch_scenario(scenario, bank):
    for period, truth in (("T1", "M1"), ("T5", "M2")):
        rep = match_model(scenario.z_ob, bank, scenario.inputs, TIConfig(window=period))
        assert rep.winner == truth
        assert rep.ranking[0] == truth and sorted(rep.ranking) == bank.labels
        d = rep.to_dict()
        assert set(d) >= {"winner", "ranking", "per_node_bhat"}
        assert [r["label"] for r in d["ranking"]] == rep.ranking
        json.loads(rep.to_json())


def test_singleton_and_ties(scenario, bank, caplog):
    cfg = TIConfig(window="T1")
    solo = ModelBank((("only", bank["M2"]),))
    assert match_model(scenario.z_ob, solo, scenario.inputs, cfg).winner == "only"
    twins = ModelBank((("first", bank["M2"]), ("second", bank["M2"]), ("M1", bank["M1"])))
    with caplog.at_level(logging.WARNING, logger="gridjac.topology"):
        rep = match_model(scenario.z_ob, twins, scenario.inputs, TIConfig(window="T5"))
    assert rep.winner == "first"
    assert any("tie" in r.message for r in caplog.records)


def test_exact_match_distance_is_zero(bank):
    sc = synthesize(ScenarioConfig(sigma_e=0.0, renewables_amplitude=0.0, switch_sample=1440), bank)
    rep = match_model(sc.z_ob, bank, sc.inputs, TIConfig(window="T1"))
    best = {r.label: r.distance for r in rep.results}
    assert best["M1"] < 1e-6
    assert rep.winner == "M1"


def test_offset_and_threads_do_not_change_ranking(scenario, bank, monkeypatch):
    cfg = TIConfig(window="T5")
    base = match_model(scenario.z_ob, bank, scenario.inputs, cfg)
    shifted = match_model(scenario.z_ob + 0.01, bank, scenario.inputs, cfg)
    assert shifted.ranking == base.ranking
    monkeypatch.setenv("GRIDJAC_THREADS", "3")
    assert worker_count() == 3
    threaded = match_model(scenario.z_ob, bank, scenario.inputs, cfg)
    assert [r.distance for r in threaded.results] == [r.distance for r in base.results]


def test_factor_removal_and_subsets(scenario, bank):
    rep = match_model(scenario.z_ob, bank, scenario.inputs, TIConfig(window="T1", p=2, b=0.0))
    assert all(r.p == 2 and r.b == 0.0 for r in rep.results)
    sub = match_model(scenario.z_ob, bank, scenario.inputs,
                      TIConfig(window="T1", nodes=tuple(range(14, 34))))
    assert len(sub.results[0].bhat) == 20
    with pytest.raises(RangeError):
        match_model(scenario.z_ob, bank, scenario.inputs, TIConfig(window="T1", p=33))


def test_failures(scenario, bank):
    with pytest.raises(DimensionError):
        match_model(scenario.z_ob[:, :100], bank, scenario.inputs)
    heavy = InputSeries(scenario.inputs.p[:50] * 60, scenario.inputs.q[:50] * 60)
    with pytest.raises(TIFailure):
        match_model(scenario.z_ob[:, :50], bank, heavy)


def test_prediction_cache(scenario, bank):
    cache = {}
    cfg = TIConfig(window="T1")
    first = match_model(scenario.z_ob, bank, scenario.inputs, cfg, predictions=cache)
    assert len(cache) == 3
    again = match_model(scenario.z_ob + 0.01, bank, scenario.inputs, cfg, predictions=cache)
    assert len(cache) == 3 and again.ranking == first.ranking
    match_model(scenario.z_ob, bank, scenario.inputs, TIConfig(window="T5"), predictions=cache)
    assert len(cache) == 6
