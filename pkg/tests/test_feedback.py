import dataclasses

import numpy as np
import pytest

from stackelberg_lq import ModelSpec, from_advertising
from stackelberg_lq.feedback import (follower_best_response, follower_control, follower_stage_solution,
                                     leader_control, maximum_condition_residual, reconstruct_Y,
                                     solve_check_phi, solve_offline, solve_phi)
from stackelberg_lq.model import CoefficientFn
from stackelberg_lq.riccati import solve_leader_riccatis

from conftest import zero_params

# Controls at t = 0 with Xhat = Xcheck = (0.01, 0) on the advertising parameters.
# Offline solves at N = 2000, 8000 and 32000 agree to 2e-15; the N = 32000 values are kept.
V2_0 = 1.3542385732335718
V1_0 = 1.7934359708429459
# follower-stage offset at t = 0 with the leader control frozen at 0.1 (N = 2000 vs 32000: 2e-15)
THETA0_FROZEN = -0.43615294627439993


def test_offsets_zero_without_forcing(grid200):
    m = ModelSpec(A=0.2, B1=0.5, B2=0.3, L=1.0, M=1.0, L_bar=1.0, M_bar=1.0)
    off = solve_offline(m, grid200)
    assert np.all(off.Phi_check.values == 0)
    assert np.all(off.Phi.values == 0)


def test_offsets_terminal_values(grid200):
    m = ModelSpec(A=0.2, B1=0.5, B2=0.3, m=0.4, m_bar=-0.7, l=0.2, r_bar=0.1)
    off = solve_offline(m, grid200)
    assert np.array_equal(off.Phi_check.values[-1], [-0.7, 0.4])
    assert np.array_equal(off.Phi.values[-1], [-0.7, 0.4])


def test_advertising_offsets(adv_offline):
    assert np.array_equal(adv_offline.Phi_check.values[-1], [0.0, 0.0])
    assert np.array_equal(adv_offline.Phi.values[-1], [0.0, 0.0])
    assert np.all(np.isfinite(adv_offline.Phi.values))
    assert np.max(np.abs(adv_offline.Phi.values - adv_offline.Phi_check.values)) < 1e-10


def test_phi_equals_check_phi_without_leader_coupling(grid200):
    m = ModelSpec(A=-0.3, B1=0.5, B2=0.0, L=1.0, M=0.5, l=0.3, r=0.2, alpha=0.1, l_bar=0.4)
    off = solve_offline(m, grid200)
    blk = off.blocks
    blk = dataclasses.replace(blk, D1=np.zeros_like(blk.D1), D2=np.zeros_like(blk.D2))
    pis = solve_leader_riccatis(blk, grid200)
    assert np.all(pis.Pi3.values == 0)
    pc = solve_check_phi(blk, *pis, grid200)
    p = solve_phi(blk, *pis, pc, grid200)
    assert np.max(np.abs(p.values - pc.values)) < 1e-14


def test_controls_collapse_to_linear_offsets(grid200):
    p = zero_params(gamma1=0.6, gamma2=0.5, mu1=0.3, mu2=0.5)
    off = solve_offline(from_advertising(p), grid200)
    z = np.zeros(2)
    for k in (0, 100, 200):
        assert leader_control(k, z, off) == pytest.approx(1.0, abs=1e-14)
        assert follower_control(k, z, z, off) == pytest.approx(0.6 / 0.3, abs=1e-14)


def test_controls_advertising_oracle(adv_offline):
    X = np.array([0.01, 0.0])
    assert abs(leader_control(0, X, adv_offline) - V2_0) < 1e-8
    assert abs(follower_control(0, X, X, adv_offline) - V1_0) < 1e-8


def test_controls_vectorize_over_paths(adv_offline, rng):
    X = rng.standard_normal((5, 2))
    Xc = rng.standard_normal((5, 2))
    batch = follower_control(3, X, Xc, adv_offline)
    single = [follower_control(3, X[i], Xc[i], adv_offline) for i in range(5)]
    assert np.allclose(batch, single, rtol=0, atol=1e-15)


def test_reconstruct_Y_without_riccatis(grid200):
    p = zero_params(gamma1=0.6, gamma2=0.5, theta1=0.3)
    off = solve_offline(from_advertising(p), grid200)
    X = np.array([0.2, -0.1])
    assert np.array_equal(reconstruct_Y(50, X, X, X, off), off.Phi[50])


def test_reconstruct_Y_terminal(adv_offline, rng):
    X, Xh, Xc = rng.standard_normal((3, 2))
    Y = reconstruct_Y(200, X, Xh, Xc, adv_offline)
    expected = adv_offline.blocks.M[-1] @ X + adv_offline.blocks.M_T
    assert np.allclose(Y, expected, rtol=0, atol=1e-14)
    assert Y[1] == 0.0


def test_maximum_condition_holds_for_any_estimate(adv_offline, rng):
    Xc = rng.standard_normal((adv_offline.grid.N + 1, 2))
    assert maximum_condition_residual(adv_offline, Xc) < 1e-12


def test_follower_stage_without_forcing(grid200):
    m = ModelSpec(A=-0.3, B1=0.5, B2=0.4, L=1.0, M=0.5)
    st = follower_stage_solution(m, CoefficientFn(0.0), grid200)
    assert np.all(st.theta_hat.values == 0)
    assert np.allclose(st.gain, -0.5 * st.Pi.values / 1.0, rtol=0, atol=1e-15)
    assert np.all(st.offset == 0)


def test_follower_stage_unobserved_case_offset_ode(grid200):
    # Pi = 0 removes the leader term; theta' = -(A theta + l), theta(T) = m
    A, l, m = -0.4, 0.3, 0.2
    st = follower_stage_solution(ModelSpec(A=A, B1=0.5, l=l, m=m), CoefficientFn(0.7), grid200)
    assert np.all(st.Pi.values == 0)
    tau = 1.0 - grid200.nodes
    exact = m * np.exp(A * tau) + l * (np.exp(A * tau) - 1) / A
    assert np.max(np.abs(st.theta_hat.values - exact)) < 1e-10


def test_follower_stage_frozen_leader_oracle(adv_model, grid200):
    st = follower_stage_solution(adv_model, CoefficientFn(0.1), grid200)
    assert abs(st.theta_hat.values[0] - THETA0_FROZEN) < 1e-8


def test_best_response_to_equilibrium_rule_recovers_offset(adv_offline):
    hg = adv_offline.half_gains
    kappa, beta = follower_best_response(adv_offline, hg.G2, hg.b2)
    # equilibrium theta_hat is the second row of Pi3 Xcheck + Phi
    assert np.max(np.abs(kappa.values - adv_offline.Pi3.values[:, 1, :])) < 1e-10
    assert np.max(np.abs(beta.values - adv_offline.Phi.values[:, 1])) < 1e-10


def test_gains_shapes(adv_offline):
    g = adv_offline.gains
    n = adv_offline.grid.N + 1
    assert g.G2.shape == (n, 2) and g.G1_hat.shape == (n, 2) and g.b1.shape == (n,)
