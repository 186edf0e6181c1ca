import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from stackelberg_lq import ModelSpec, TimeGrid, assemble_blocks
from stackelberg_lq.errors import RiccatiBlowUp
from stackelberg_lq.feedback import solve_offline
from stackelberg_lq.riccati import (MatTrajectory, RiccatiSet, check_riccati_relations,
                                    check_uniqueness_conditions, integrate_rk4, ode_residual,
                                    riccati_exponential, riccati_via_matrix_exponential,
                                    alt_riccatis_via_matrix_exponential, solve_alt_riccatis,
                                    solve_error_variance_P, solve_follower_riccati,
                                    solve_leader_riccatis, solve_state_error_covariance)

# follower Riccati on the advertising parameters at t = 0; DOP853 with rtol 1e-13,
# confirmed by RK4 at N = 2000 (difference 7e-16)
PI0_ADVERTISING = -0.20209653257915181


def test_follower_riccati_zero_without_state_cost(grid200):
    Pi = solve_follower_riccati(ModelSpec(A=-0.3, B1=1.0, L=0.0, M=0.0), grid200)
    assert np.all(Pi.values == 0.0)


def test_follower_riccati_linear_case_closed_form(grid200):
    A, M = 0.7, 1.3
    Pi = solve_follower_riccati(ModelSpec(A=A, B1=0.0, L=0.0, M=M), grid200)
    t = grid200.nodes
    assert np.max(np.abs(Pi.values - M * np.exp(2 * A * (1 - t)))) < 1e-9


def test_follower_riccati_advertising_oracle(adv_model, grid200):
    Pi = solve_follower_riccati(adv_model, grid200)
    assert Pi.values[-1] == adv_model.M
    assert abs(Pi.values[0] - PI0_ADVERTISING) < 1e-8


def test_follower_riccati_matches_independent_integrator(adv_model):
    A, B1, R, L, M = -0.5, -0.2, 0.3, -1.2, 1.6
    g = TimeGrid(1.0, 50)
    ref = solve_ivp(lambda t, p: -(2 * A * p - B1 ** 2 / R * p ** 2 + L), [1, 0], [M],
                    t_eval=g.nodes[::-1], method="DOP853", rtol=1e-12, atol=1e-14)
    Pi = solve_follower_riccati(adv_model, g)
    assert np.max(np.abs(Pi.values - ref.y[0][::-1])) < 1e-8


def test_follower_riccati_blow_up_is_reported(grid200):
    with pytest.raises(RiccatiBlowUp):
        solve_follower_riccati(ModelSpec(B1=1.0, R=-0.01, M=5.0), grid200)


def test_error_variance_zero_without_noise(grid200):
    assert np.all(solve_error_variance_P(ModelSpec(c=0.0, c_bar=0.0, f1=0.4), grid200).values == 0)


def test_error_variance_unobserved_closed_form(grid200):
    A, cb = -0.5, 0.4
    P = solve_error_variance_P(ModelSpec(A=A, c_bar=cb, f1=0.0), grid200)
    t = grid200.nodes
    assert np.max(np.abs(P.values - cb ** 2 * (np.exp(2 * A * t) - 1) / (2 * A))) < 1e-10


def _zero_blocks(grid, **model_kw):
    m = ModelSpec(**model_kw)
    return assemble_blocks(m, np.zeros(2 * grid.N + 1), grid)


def test_leader_riccatis_zero_without_forcing(grid200):
    blk = _zero_blocks(grid200, A=0.3, B1=0.5, B2=0.2)
    pis = solve_leader_riccatis(blk, grid200)
    assert np.all(pis.Pi1.values == 0)


def test_alt_riccatis_zero_without_forcing(grid200):
    blk = _zero_blocks(grid200, A=0.3, B1=0.5, B2=0.0)
    for tr in solve_alt_riccatis(blk, grid200):
        assert np.all(tr.values == 0)


def test_advertising_zero_pattern_and_symmetry(adv_offline):
    for tr in (adv_offline.Pi1, adv_offline.Pi2):
        v = tr.values
        assert np.max(np.abs([v[:, 0, 1], v[:, 1, 0], v[:, 1, 1]])) < 1e-10
    for tr in (adv_offline.Pi1, adv_offline.Pi2, adv_offline.Pi3, adv_offline.cov):
        v = tr.values
        assert np.max(np.abs(v - np.swapaxes(v, 1, 2))) < 1e-8


def test_alt_relations_on_advertising(adv_offline, grid200):
    alts = solve_alt_riccatis(adv_offline.blocks, grid200)
    assert np.max(np.abs(alts[0].values - adv_offline.Pi1.values)) < 1e-8
    assert np.max(np.abs((alts[2].values - alts[1].values) - adv_offline.Pi3.values)) < 1e-8
    res = check_riccati_relations(adv_offline.riccatis, alts)
    assert max(res.values()) < 1e-8


def test_relations_exact_when_constructed(adv_offline):
    p = adv_offline.riccatis
    g = p.Pi1.grid
    z = np.zeros_like(p.Pi1.slopes)
    a1 = p.Pi1.values
    a2 = a1 + p.Pi2.values
    a3 = a2 + p.Pi3.values
    alts = RiccatiSet(*(MatTrajectory(g, a.copy(), z.copy(), "alt") for a in (a1, a2, a3)))
    # only rounding from the add-then-subtract round trip remains
    assert max(check_riccati_relations(p, alts).values()) < 1e-15


def test_relations_reject_mismatched_grids(adv_model, adv_offline):
    other = solve_offline(adv_model, TimeGrid(1.0, 100))
    with pytest.raises(ValueError):
        check_riccati_relations(adv_offline.riccatis, other.riccatis)


def test_exponential_zero_blocks(grid200):
    blk = _zero_blocks(grid200)
    assert np.all(riccati_via_matrix_exponential(blk, 0.3) == 0)


def test_exponential_terminal_value(adv_offline):
    fb = adv_offline.blocks.frozen(0)
    assert np.array_equal(riccati_via_matrix_exponential(fb, 1.0), fb.M[-1])


def test_exponential_matches_frozen_ode(adv_offline, grid200):
    fb = adv_offline.blocks.frozen(0)
    pis = solve_leader_riccatis(fb, grid200)
    alts = solve_alt_riccatis(fb, grid200)
    for k in range(0, grid200.N + 1, 20):
        t = grid200.nodes[k]
        assert np.max(np.abs(riccati_via_matrix_exponential(fb, t) - pis.Pi1[k])) < 1e-6
        for a, b in zip(alt_riccatis_via_matrix_exponential(fb, t), alts):
            assert np.max(np.abs(a - b[k])) < 1e-6


def test_exponential_rejects_time_varying_blocks(adv_offline):
    with pytest.raises(ValueError):
        riccati_via_matrix_exponential(adv_offline.blocks, 0.0)


def test_scalar_exponential_closed_form():
    # p' + 2kp + s = 0, p(T) = g  ->  p = g e^{2k tau} + s (e^{2k tau} - 1) / (2k)
    k, s, g, tau = -0.4, 0.7, 1.1, 0.8
    p = riccati_exponential(np.array([[k]]), np.zeros((1, 1)), np.array([[s]]), np.array([[g]]), tau)
    e = np.exp(2 * k * tau)
    assert p[0, 0] == pytest.approx(g * e + s * (e - 1) / (2 * k), rel=1e-12)


def _sym(a):
    a = np.asarray(a).reshape(2, 2)
    return 0.5 * (a + a.T)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-0.8, 0.8), min_size=4, max_size=4),
       st.lists(st.floats(-0.5, 0.5), min_size=4, max_size=4),
       st.lists(st.floats(-0.5, 0.5), min_size=4, max_size=4),
       st.lists(st.floats(-0.5, 0.5), min_size=4, max_size=4))
def test_exponential_agrees_with_rk4_on_random_constant_data(K, Q, S, G):
    K = np.asarray(K).reshape(2, 2)
    Q, S, G = _sym(Q), _sym(S), _sym(G)
    g = TimeGrid(0.5, 100)

    def rhs(j, p):
        return -(p @ K + K.T @ p + p @ Q @ p + S)

    tr = integrate_rk4(rhs, G, g, True, "P", cls=MatTrajectory)
    for k in (0, 50):
        assert np.max(np.abs(riccati_exponential(K, Q, S, G, g.T - g.nodes[k]) - tr[k])) < 1e-7


def test_state_error_covariance_zero_without_unobserved_noise(grid200):
    blk = _zero_blocks(grid200, A=0.2, c=0.5, c_bar=0.0, f1=0.3)
    pis = solve_leader_riccatis(blk, grid200)
    assert np.all(solve_state_error_covariance(blk, pis.Pi1, grid200).values == 0)


def test_state_error_covariance_psd_on_advertising(adv_offline):
    v = adv_offline.cov.values
    assert np.max(np.abs(v - np.swapaxes(v, 1, 2))) < 1e-8
    assert np.linalg.eigvalsh(v).min() > -1e-10
    assert np.max(np.abs(v[:, 0, 0] - adv_offline.P.values)) < 1e-10


def test_uniqueness_all_zero(grid200):
    blk = _zero_blocks(grid200)
    pis = solve_leader_riccatis(blk, grid200)
    rep = check_uniqueness_conditions(blk, *pis, grid200)
    for v in rep.min_eig.values():
        assert np.all(v == 0)
    assert not any(rep.strictly_positive().values())


def test_uniqueness_identity_weight_strictly_positive(grid200):
    blk = _zero_blocks(grid200)
    blk = dataclasses.replace(blk, A3=np.broadcast_to(np.eye(2), blk.A3.shape).copy())
    pis = solve_leader_riccatis(blk, grid200)
    rep = check_uniqueness_conditions(blk, *pis, grid200)
    assert all(rep.strictly_positive().values())


def test_uniqueness_sign_table_on_advertising(adv_offline, grid200):
    rep = check_uniqueness_conditions(adv_offline.blocks, *adv_offline.riccatis, grid200)
    tab = rep.sign_table()
    assert set(tab) == {"total", "partial", "first"}
    assert all(v.shape == (grid200.N + 1,) for v in tab.values())


def test_ode_residual_fourth_order(adv_model):
    r = [ode_residual(solve_follower_riccati(adv_model, TimeGrid(1.0, n))) for n in (16, 32)]
    assert r[0] / r[1] > 12
