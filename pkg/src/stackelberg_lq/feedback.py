"""Offsets of the decoupling ansatz, equilibrium feedback gains and the
standalone follower stage.

With deterministic coefficients and terminal values the backward equations
for the offsets have deterministic solutions, so their martingale parts vanish
and they are integrated as linear ODEs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import OffsetBlowUp
from .model import BlockCoefficients, CoefficientFn, ModelSpec, TimeGrid, assemble_blocks, validate
from .riccati import (MatTrajectory, RiccatiSet, ScalarTrajectory, VecTrajectory, integrate_rk4,
                      solve_error_variance_P, solve_follower_riccati, solve_leader_riccatis,
                      solve_state_error_covariance)


def _mv(M, v):
    """Batched matrix-vector product over the leading axis."""
    return np.einsum("...ij,...j->...i", M, v)


def _linear_rhs(Amat: np.ndarray, f: np.ndarray):
    """Backward linear ODE y' = -(Amat y + f)."""
    def rhs(j, y):
        return -(Amat[j] @ y + f[j])
    return rhs


def _check_phi_terms(blocks: BlockCoefficients, S: np.ndarray, S3: np.ndarray):
    Abar = blocks.A1 + blocks.A2
    Dt, Et = blocks.D1D1, np.swapaxes(blocks.D1D2, -1, -2)
    rb = (blocks.r_bar / blocks.R_bar)[:, None]
    forcing = -_mv(S3, blocks.D1 * rb) - blocks.D2 * rb + _mv(S3, blocks.C1) + blocks.C2
    return Abar, Dt, Et, forcing


def solve_check_phi(blocks: BlockCoefficients, Pi1: MatTrajectory, Pi2: MatTrajectory,
                    Pi3: MatTrajectory, grid: TimeGrid) -> VecTrajectory:
    """Leader-side offset, backward from the terminal linear weights (m_bar, m)."""
    S = Pi1.half() + Pi2.half()
    S3 = S + Pi3.half()
    Abar, Dt, Et, forcing = _check_phi_terms(blocks, S, S3)
    Amat = S3 @ blocks.B1 - S3 @ Dt + Abar - Et
    return integrate_rk4(_linear_rhs(Amat, forcing), blocks.M_T, grid, True, "Phi_check",
                         guard=OffsetBlowUp, cls=VecTrajectory)


def solve_phi(blocks: BlockCoefficients, Pi1: MatTrajectory, Pi2: MatTrajectory,
              Pi3: MatTrajectory, Phi_check: VecTrajectory, grid: TimeGrid) -> VecTrajectory:
    """Follower-side offset; consumes the leader-side offset as a known input."""
    P3 = Pi3.half()
    S = Pi1.half() + Pi2.half()
    S3 = S + P3
    Abar, Dt, Et, forcing = _check_phi_terms(blocks, S, S3)
    coupling = -S3 @ Dt + P3 @ blocks.B1 - Et
    f = _mv(coupling, Phi_check.half()) + forcing
    Amat = S @ blocks.B1 + Abar
    return integrate_rk4(_linear_rhs(Amat, f), blocks.M_T, grid, True, "Phi",
                         guard=OffsetBlowUp, cls=VecTrajectory)


@dataclass(frozen=True)
class FeedbackGains:
    """Affine feedback coefficients per node (index k) or per half-grid point.

    v2 = G2 . Xcheck + b2
    v1 = G1_hat . Xhat + G1_check . Xcheck + b1
    """

    G2: np.ndarray
    b2: np.ndarray
    G1_hat: np.ndarray
    G1_check: np.ndarray
    b1: np.ndarray

    def at_nodes(self) -> "FeedbackGains":
        return FeedbackGains(*(getattr(self, f)[0::2] for f in ("G2", "b2", "G1_hat", "G1_check", "b1")))


@dataclass(frozen=True)
class ClosedLoopCoefficients:
    """Per-node coefficients of the Euler recursions for X, Xhat and Xcheck.

    Xcheck' = Mc Xcheck + cc                      (+ Sigma1 dW)
    Xhat'   = Mh Xhat + Mhc Xcheck + ch           (+ (Sigma1 + cov F) dWtilde)
    K'      = a K + b lambda,  lambda = first row of Pi1 X + Pi2 Xhat + Pi3 Xcheck + Phi
    """

    Mc: np.ndarray
    cc: np.ndarray
    Mh: np.ndarray
    Mhc: np.ndarray
    ch: np.ndarray
    gain_hat: np.ndarray
    a: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class OfflineSolution:
    """All deterministic trajectories of the equilibrium on one grid."""

    model: ModelSpec
    grid: TimeGrid
    Pi: ScalarTrajectory
    P: ScalarTrajectory
    Pi1: MatTrajectory
    Pi2: MatTrajectory
    Pi3: MatTrajectory
    cov: MatTrajectory
    Phi: VecTrajectory
    Phi_check: VecTrajectory
    blocks: BlockCoefficients

    @property
    def riccatis(self) -> RiccatiSet:
        return RiccatiSet(self.Pi1, self.Pi2, self.Pi3)

    @cached_property
    def _half(self) -> dict[str, np.ndarray]:
        P1, P2, P3 = self.Pi1.half(), self.Pi2.half(), self.Pi3.half()
        return dict(Pi=self.Pi.half(), Pi1=P1, Pi2=P2, Pi3=P3, S=P1 + P2, S3=P1 + P2 + P3,
                    Phi=self.Phi.half(), Phi_check=self.Phi_check.half(), cov=self.cov.half())

    @cached_property
    def half_gains(self) -> FeedbackGains:
        """Gains on the half grid (used by ODEs that consume them)."""
        t = self.grid.half_nodes
        m, blk, hv = self.model, self.blocks, self._half
        Rb, rb = blk.R_bar, blk.r_bar
        D1, D2 = blk.D1, blk.D2
        G2 = -(_mv(np.swapaxes(hv["S3"], -1, -2), D1) + D2) / Rb[:, None]
        b2 = -(np.einsum("ti,ti->t", D1, hv["Phi_check"]) + rb) / Rb
        R = np.broadcast_to(m.R(t), t.shape)
        B1 = np.broadcast_to(m.B1(t), t.shape)
        r = np.broadcast_to(m.r(t), t.shape)
        G1_hat = np.zeros_like(G2)
        G1_hat[:, 0] = B1 * hv["Pi"]
        G1_hat += B1[:, None] * hv["S"][:, 1, :]
        G1_hat = -G1_hat / R[:, None]
        G1_check = -(B1[:, None] * hv["Pi3"][:, 1, :]) / R[:, None]
        b1 = -(B1 * hv["Phi"][:, 1] + r) / R
        return FeedbackGains(G2, b2, G1_hat, G1_check, b1)

    @cached_property
    def gains(self) -> FeedbackGains:
        return self.half_gains.at_nodes()

    @cached_property
    def closed_loop(self) -> ClosedLoopCoefficients:
        blk, hv = self.blocks, self._half
        Abar = blk.A1 + blk.A2
        Dt, E = blk.D1D1, blk.D1D2
        BD = blk.B1 - Dt
        rb = (blk.r_bar / blk.R_bar)[:, None]
        base = -blk.D1 * rb + blk.C1
        Mc = Abar - E + BD @ hv["S3"]
        cc = _mv(BD, hv["Phi_check"]) + base
        Mh = Abar + blk.B1 @ hv["S"]
        Mhc = blk.B1 @ hv["Pi3"] - Dt @ hv["S3"] - E
        ch = _mv(blk.B1, hv["Phi"]) - _mv(Dt, hv["Phi_check"]) + base
        gain_hat = blk.Sigma1 + _mv(hv["cov"], blk.F)
        nodes = slice(0, None, 2)
        return ClosedLoopCoefficients(
            Mc=Mc[nodes], cc=cc[nodes], Mh=Mh[nodes], Mhc=Mhc[nodes], ch=ch[nodes],
            gain_hat=gain_hat[nodes], a=blk.A1[nodes, 1, 1], b=blk.B1[nodes, 0, 1])

    @cached_property
    def check_filter_coefficients_half(self) -> tuple[np.ndarray, np.ndarray]:
        """Drift matrix and constant of the Xcheck recursion on the half grid."""
        blk, hv = self.blocks, self._half
        BD = blk.B1 - blk.D1D1
        rb = (blk.r_bar / blk.R_bar)[:, None]
        Mc = blk.A1 + blk.A2 - blk.D1D2 + BD @ hv["S3"]
        cc = _mv(BD, hv["Phi_check"]) - blk.D1 * rb + blk.C1
        return Mc, cc


def solve_offline(model: ModelSpec, grid: TimeGrid) -> OfflineSolution:
    """Validate the model and solve every deterministic equation on the grid."""
    validate(model, grid)
    Pi = solve_follower_riccati(model, grid)
    P = solve_error_variance_P(model, grid)
    blocks = assemble_blocks(model, Pi.half(), grid)
    pis = solve_leader_riccatis(blocks, grid)
    cov = solve_state_error_covariance(blocks, pis.Pi1, grid)
    Phi_check = solve_check_phi(blocks, *pis, grid)
    Phi = solve_phi(blocks, *pis, Phi_check, grid)
    return OfflineSolution(model, grid, Pi, P, pis.Pi1, pis.Pi2, pis.Pi3, cov, Phi, Phi_check, blocks)


def leader_control(k: int, X_check: np.ndarray, offline: OfflineSolution) -> np.ndarray:
    """Leader's control at node k for one or many estimates (last axis of size 2)."""
    g = offline.gains
    return X_check @ g.G2[k] + g.b2[k]


def follower_control(k: int, X_hat: np.ndarray, X_check: np.ndarray,
                     offline: OfflineSolution) -> np.ndarray:
    """Follower's control at node k."""
    g = offline.gains
    return X_hat @ g.G1_hat[k] + X_check @ g.G1_check[k] + g.b1[k]


def reconstruct_Y(k: int, X: np.ndarray, X_hat: np.ndarray, X_check: np.ndarray,
                  offline: OfflineSolution) -> np.ndarray:
    """Pi1 X + Pi2 Xhat + Pi3 Xcheck + Phi at node k; components (lambda, theta_hat)."""
    return (X @ offline.Pi1[k].T + X_hat @ offline.Pi2[k].T + X_check @ offline.Pi3[k].T
            + offline.Phi[k])


def maximum_condition_residual(offline: OfflineSolution, X_check: np.ndarray) -> float:
    """Max over nodes of |R_bar v2 + r_bar + D1.Ycheck + D2.Xcheck| for a given
    Xcheck trajectory of shape (N+1, 2), with Ycheck = (Pi1+Pi2+Pi3) Xcheck + Phi_check."""
    blk = offline.blocks
    nodes = slice(0, None, 2)
    S3 = offline.Pi1.values + offline.Pi2.values + offline.Pi3.values
    Yc = _mv(S3, X_check) + offline.Phi_check.values
    v2 = np.array([leader_control(k, X_check[k], offline) for k in range(offline.grid.N + 1)])
    res = (blk.R_bar[nodes] * v2 + blk.r_bar[nodes] + np.einsum("ti,ti->t", blk.D1[nodes], Yc)
           + np.einsum("ti,ti->t", blk.D2[nodes], X_check))
    return float(np.max(np.abs(res)))


@dataclass(frozen=True)
class FollowerStage:
    """Follower's best response to a deterministic leader control.

    v1 = gain * xhat + offset, with gain = -B1 Pi / R and
    offset = -(B1 theta_hat + r) / R.
    """

    Pi: ScalarTrajectory
    P: ScalarTrajectory
    theta_hat: ScalarTrajectory
    gain: np.ndarray
    offset: np.ndarray
    v2: np.ndarray


def _theta_forcing(model: ModelSpec, t: np.ndarray, Pi: np.ndarray) -> np.ndarray:
    """Part of the theta_hat drift not involving theta_hat or v2."""
    B1, R, r = model.B1(t), model.R(t), model.r(t)
    return -B1 * Pi * r / R + model.alpha(t) * Pi + model.l(t)


def follower_stage_solution(model: ModelSpec, v2: CoefficientFn, grid: TimeGrid) -> FollowerStage:
    """Solve the follower's problem for a deterministic leader control v2(t)."""
    v2 = CoefficientFn.of(v2)
    t = grid.half_nodes
    Pi = solve_follower_riccati(model, grid)
    P = solve_error_variance_P(model, grid)
    ph = Pi.half()
    B1, R = model.B1(t), model.R(t)
    a = np.broadcast_to(model.A(t) - B1 ** 2 * ph / R, t.shape)
    f = np.broadcast_to(model.B2(t) * ph * v2(t) + _theta_forcing(model, t, ph), t.shape)

    def rhs(j, y):
        return -(a[j] * y + f[j])

    theta = integrate_rk4(rhs, model.m, grid, True, "theta_hat", guard=OffsetBlowUp,
                          cls=ScalarTrajectory)
    tn = grid.nodes
    B1n, Rn = model.B1(tn), model.R(tn)
    gain = np.broadcast_to(-B1n * Pi.values / Rn, tn.shape).copy()
    offset = np.broadcast_to(-(B1n * theta.values + model.r(tn)) / Rn, tn.shape).copy()
    return FollowerStage(Pi, P, theta, gain, offset, np.broadcast_to(v2(tn), tn.shape).copy())


def follower_best_response(offline: OfflineSolution, g_row: np.ndarray, g0: np.ndarray
                           ) -> tuple[VecTrajectory, ScalarTrajectory]:
    """Follower's response when the leader plays v2 = g_row . Z + g0, Z being the
    leader-side filter recursion driven by W.

    The follower's offset is then theta_hat = kappa . Z + beta with
    kappa' = -(Mc^T + a) kappa - B2 Pi g_row,      kappa(T) = 0
    beta'  = -a beta - B2 Pi g0 - h - kappa . cc,   beta(T) = m
    g_row and g0 are sampled on the half grid.
    """
    model, grid = offline.model, offline.grid
    t = grid.half_nodes
    Mc, cc = offline.check_filter_coefficients_half
    ph = offline._half["Pi"]
    B1, R = model.B1(t), model.R(t)
    a = np.broadcast_to(model.A(t) - B1 ** 2 * ph / R, t.shape)
    B2Pi = np.broadcast_to(model.B2(t) * ph, t.shape)
    h = np.broadcast_to(_theta_forcing(model, t, ph), t.shape)
    McT = np.swapaxes(Mc, -1, -2) + a[:, None, None] * np.eye(2)
    gk = B2Pi[:, None] * g_row

    kappa = integrate_rk4(_linear_rhs(McT, gk), np.zeros(2), grid, True, "kappa",
                          guard=OffsetBlowUp, cls=VecTrajectory)
    kh = kappa.half()
    fb = B2Pi * g0 + h + np.einsum("ti,ti->t", kh, cc)

    def rhs(j, y):
        return -(a[j] * y + fb[j])

    beta = integrate_rk4(rhs, model.m, grid, True, "beta", guard=OffsetBlowUp, cls=ScalarTrajectory)
    return kappa, beta
