import numpy as np
import pytest

from stackelberg_lq import ADVERTISING_DEFAULTS, ModelSpec, TimeGrid, from_advertising
from stackelberg_lq.errors import SpecialCaseInapplicable
from stackelberg_lq.feedback import follower_control, leader_control, solve_offline
from stackelberg_lq.montecarlo import NoiseSpec
from stackelberg_lq.scenarios import (SWEEP_SERIES, advertising_scenario, compare_special_case,
                                      parameter_sweep, special_case_solution)

SPECIAL = dict(ADVERTISING_DEFAULTS, f1=0.0, kappa1=0.0, kappa2=0.0, M1=0.0)


@pytest.fixture(scope="module")
def special():
    m = from_advertising(SPECIAL)
    g = TimeGrid(1.0, 200)
    return m, special_case_solution(m, g), solve_offline(m, g)


def test_special_case_rejects_general_model(adv_model, grid200):
    with pytest.raises(SpecialCaseInapplicable):
        special_case_solution(adv_model, grid200)


def test_special_case_homogeneous_offsets(grid200):
    m = ModelSpec(A=-0.3, B1=0.5, B2=0.2, M_bar=1.0, m_bar=0.0)
    sc = special_case_solution(m, grid200)
    assert np.all(sc.theta_hat.values == 0)
    assert np.all(sc.Phi_hat.values[:, 1] == 0)


def test_special_case_zero_leader_terminal(grid200):
    sc = special_case_solution(ModelSpec(A=-0.3, B1=0.5, B2=0.2, l=0.1, M_bar=0.0), grid200)
    assert np.all(sc.Pi1_bar.values == 0) and np.all(sc.Pi2_bar.values == 0)


def test_special_case_agrees_with_general_pipeline(special):
    m, sc, off = special
    gaps = compare_special_case(sc, off)
    assert gaps["Pi"] == 0.0
    for k, v in gaps.items():
        assert v < 1e-6, k


def test_special_case_follower_rule_in_advertising_terms(special):
    m, sc, off = special
    p = SPECIAL
    z = np.zeros(2)
    for k in range(0, 201, 25):
        v1 = -(-p["beta1"] * sc.theta_hat.values[k] - p["gamma1"]) / p["mu1"]
        assert sc.follower_control(k) == pytest.approx(v1, abs=1e-14)
        assert abs(follower_control(k, z, z, off) - v1) < 1e-6


def test_special_case_leader_rule_matches_general(special, rng):
    m, sc, off = special
    for k in (0, 100, 200):
        xh = rng.standard_normal()
        assert abs(sc.leader_control(k, xh) - leader_control(k, np.array([xh, 0.0]), off)) < 1e-6


def test_advertising_scenario_bundle(grid200):
    run = advertising_scenario(ADVERTISING_DEFAULTS, grid200, NoiseSpec(1, 500))
    assert run.diagnostics.warnings and not run.diagnostics.hard_violations
    for v in run.ensemble.sample.values():
        assert np.all(np.isfinite(v))
    assert np.isfinite(run.costs.J1) and np.isfinite(run.costs.J2)


def test_zero_noise_scenario_single_path(grid200):
    p = dict(ADVERTISING_DEFAULTS, sigma=0.0, sigma_bar=0.0)
    run = advertising_scenario(p, grid200, NoiseSpec(1, 3))
    assert np.all(run.ensemble.var["x"] < 1e-28)
    assert np.max(np.abs(run.ensemble.mean["x"] - run.ensemble.mean["xhat1"])) < 1e-12


def test_single_value_sweep_equals_one_run():
    g = TimeGrid(1.0, 50)
    noise = NoiseSpec(3, 400)
    res = parameter_sweep(ADVERTISING_DEFAULTS, "beta2", [0.4], g, noise)
    run = advertising_scenario(ADVERTISING_DEFAULTS, g, noise, sample_paths=0)
    for s in SWEEP_SERIES:
        assert np.array_equal(res.mean[s][0], run.ensemble.mean[s])


def test_sweep_rejects_unknown_parameter():
    with pytest.raises(KeyError):
        parameter_sweep(ADVERTISING_DEFAULTS, "omega", [1.0], TimeGrid(1.0, 10), NoiseSpec(0, 10))


def test_sweep_ordering_report():
    g = TimeGrid(1.0, 50)
    res = parameter_sweep(ADVERTISING_DEFAULTS, "beta2", [0.04, 0.24, 0.44], g, NoiseSpec(0, 2000))
    rep = res.ordering("v2", increasing=True)
    assert rep["holds"]
    assert not res.ordering("v2", increasing=False)["holds"]
