"""Deterministic ODE layer: Riccati equations, filter error variances,
exponential representation and uniqueness diagnostics.

All equations are integrated with classical fixed-step RK4 on the uniform
grid; backward equations run from t = T down to 0. Coefficients that are
themselves ODE solutions are needed at step midpoints; those are taken from
the cubic Hermite interpolant built from nodal values and nodal slopes, which
keeps the cascade fourth order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import expm

from .errors import (CovarianceError, FilterVarianceError, RiccatiBlowUp,
                     SingularRepresentation)
from .model import BlockCoefficients, ModelSpec, TimeGrid

BLOWUP = 1e8


@dataclass(frozen=True)
class Trajectory:
    """Nodal values y(t_k) and slopes dy/dt(t_k) of an ODE solution."""

    grid: TimeGrid
    values: np.ndarray
    slopes: np.ndarray
    name: str = ""

    def __post_init__(self):
        n = self.grid.N + 1
        if self.values.shape[0] != n or self.slopes.shape != self.values.shape:
            raise ValueError(f"{self.name}: expected {n} nodes, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.name}: non-finite values")
        self.values.setflags(write=False)
        self.slopes.setflags(write=False)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, k):
        return self.values[k]

    def half(self) -> np.ndarray:
        """Values on the half grid: nodes plus Hermite midpoints."""
        y, s, h = self.values, self.slopes, self.grid.h
        out = np.empty((2 * self.grid.N + 1,) + y.shape[1:])
        out[0::2] = y
        out[1::2] = 0.5 * (y[:-1] + y[1:]) + (h / 8.0) * (s[:-1] - s[1:])
        return out


class ScalarTrajectory(Trajectory):
    pass


class MatTrajectory(Trajectory):
    pass


class VecTrajectory(Trajectory):
    pass


def integrate_rk4(rhs: Callable[[int, np.ndarray], np.ndarray], y_start, grid: TimeGrid,
                  backward: bool, name: str, guard: Callable[[str, float, float], Exception] | None = None,
                  cls=Trajectory) -> Trajectory:
    """Fixed-step RK4 for y' = rhs(j, y), j an index into grid.half_nodes.

    Backward integration starts from y(T) = y_start; forward from y(0).
    guard builds the exception raised when |y| exceeds BLOWUP or turns
    non-finite.
    """
    N, h = grid.N, grid.h
    y = np.array(y_start, dtype=float)
    vals = np.empty((N + 1,) + y.shape)
    slopes = np.empty_like(vals)
    t = grid.nodes
    if backward:
        order, step = range(N, 0, -1), -h
    else:
        order, step = range(0, N), h
    half = 0.5 * step
    k = order[0]
    vals[k] = y
    k1 = rhs(2 * k, y)
    for k in order:
        slopes[k] = k1
        jm = 2 * k - 1 if backward else 2 * k + 1
        jn = 2 * k - 2 if backward else 2 * k + 2
        k2 = rhs(jm, y + half * k1)
        k3 = rhs(jm, y + half * k2)
        k4 = rhs(jn, y + step * k3)
        y = y + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        kn = jn // 2
        big = np.max(np.abs(y))
        if not np.isfinite(big) or big > BLOWUP:
            err = (guard or RiccatiBlowUp)(name, t[kn], big)
            raise err
        vals[kn] = y
        k1 = rhs(jn, y)
    slopes[kn] = k1
    return cls(grid, vals, slopes, name)


# scalar equations of the follower stage

def solve_follower_riccati(model: ModelSpec, grid: TimeGrid) -> ScalarTrajectory:
    """Pi' = -(2 A Pi - B1^2 Pi^2 / R + L), Pi(T) = M."""
    t = grid.half_nodes
    A, L = model.A(t), model.L(t)
    q = model.B1(t) ** 2 / model.R(t)
    A = np.broadcast_to(A, t.shape)
    L = np.broadcast_to(L, t.shape)
    q = np.broadcast_to(q, t.shape)

    def rhs(j, p):
        return -(2.0 * A[j] * p - q[j] * p * p + L[j])

    return integrate_rk4(rhs, model.M, grid, True, "Pi", cls=ScalarTrajectory)


def solve_error_variance_P(model: ModelSpec, grid: TimeGrid, tol: float = 1e-12) -> ScalarTrajectory:
    """Filter mean-square error: P' = 2 A P - (c + f1 P)^2 + c^2 + c_bar^2, P(0) = 0."""
    t = grid.half_nodes
    A = np.broadcast_to(model.A(t), t.shape)
    c = np.broadcast_to(model.c(t), t.shape)
    cb = np.broadcast_to(model.c_bar(t), t.shape)
    f = np.broadcast_to(model.f1(t), t.shape)

    def rhs(j, p):
        e = c[j] + f[j] * p
        return 2.0 * A[j] * p - e * e + c[j] ** 2 + cb[j] ** 2

    out = integrate_rk4(rhs, 0.0, grid, False, "P", cls=ScalarTrajectory)
    k = int(np.argmin(out.values))
    if out.values[k] < -tol:
        raise FilterVarianceError(f"P({grid.nodes[k]:.6g}) = {out.values[k]:.3g} is negative")
    return out


# leader stage

class RiccatiSet(NamedTuple):
    Pi1: MatTrajectory
    Pi2: MatTrajectory
    Pi3: MatTrajectory


def _leader_terms(blocks: BlockCoefficients):
    Abar = blocks.A1 + blocks.A2
    Dt = blocks.D1D1
    E = blocks.D1D2
    return Abar, Dt, E, np.swapaxes(E, -1, -2), blocks.D2D2


def quadratic_rhs(L: np.ndarray, Q: np.ndarray, C: np.ndarray, sign: float = -1.0):
    """Right-hand side sign * (L p + p L^T + p Q p + C), coefficients on the half grid."""
    LT = np.swapaxes(L, -1, -2).copy()

    def rhs(j, p):
        return sign * (L[j] @ p + p @ LT[j] + p @ Q[j] @ p + C[j])

    return rhs


def solve_leader_riccatis(blocks: BlockCoefficients, grid: TimeGrid) -> RiccatiSet:
    """Solve Pi1, Pi2, Pi3 backward, in that order; each consumes the previous ones."""
    _check_grid(blocks.grid, grid)
    A1, A2, A3, B1 = blocks.A1, blocks.A2, blocks.A3, blocks.B1
    Abar, Dt, E, Et, G = _leader_terms(blocks)

    Pi1 = integrate_rk4(quadratic_rhs(A1, B1, A3), blocks.M[-1], grid, True, "Pi1",
                        cls=MatTrajectory)
    P1 = Pi1.half()
    Pi2 = integrate_rk4(quadratic_rhs(Abar + P1 @ B1, B1, P1 @ A2 + A2 @ P1),
                        np.zeros((2, 2)), grid, True, "Pi2", cls=MatTrajectory)
    S = P1 + Pi2.half()
    BD = B1 - Dt
    Pi3 = integrate_rk4(quadratic_rhs(S @ BD + Abar - Et, BD, -(S @ Dt @ S + Et @ S + S @ E + G)),
                        np.zeros((2, 2)), grid, True, "Pi3", cls=MatTrajectory)
    return RiccatiSet(Pi1, Pi2, Pi3)


def solve_alt_riccatis(blocks: BlockCoefficients, grid: TimeGrid) -> RiccatiSet:
    """The three independent Riccati equations whose differences give Pi1, Pi2, Pi3.
    All terminate at the leader's terminal weight block."""
    _check_grid(blocks.grid, grid)
    A1, A3, B1 = blocks.A1, blocks.A3, blocks.B1
    Abar, Dt, E, Et, G = _leader_terms(blocks)
    MT = blocks.M[-1]
    return RiccatiSet(
        integrate_rk4(quadratic_rhs(A1, B1, A3), MT, grid, True, "Pi1_alt", cls=MatTrajectory),
        integrate_rk4(quadratic_rhs(Abar, B1, A3), MT, grid, True, "Pi2_alt", cls=MatTrajectory),
        integrate_rk4(quadratic_rhs(Abar - Et, B1 - Dt, A3 - G), MT, grid, True, "Pi3_alt",
                      cls=MatTrajectory),
    )


def check_riccati_relations(pis: RiccatiSet, alts: RiccatiSet) -> dict[str, float]:
    """Max-norm residuals of alt1 - Pi1, (alt2 - alt1) - Pi2, (alt3 - alt2) - Pi3."""
    g = pis.Pi1.grid
    for tr in (*pis, *alts):
        _check_grid(tr.grid, g)
    a1, a2, a3 = (x.values for x in alts)
    return {
        "Pi1": float(np.max(np.abs(a1 - pis.Pi1.values))),
        "Pi2": float(np.max(np.abs((a2 - a1) - pis.Pi2.values))),
        "Pi3": float(np.max(np.abs((a3 - a2) - pis.Pi3.values))),
    }


def solve_state_error_covariance(blocks: BlockCoefficients, Pi1: MatTrajectory, grid: TimeGrid,
                                 sym_tol: float = 1e-8, eig_tol: float = -1e-10) -> MatTrajectory:
    """Error covariance of the follower's estimate of X = (x, K), forward from 0."""
    _check_grid(blocks.grid, grid)
    P1 = Pi1.half()
    A1, B1 = blocks.A1, blocks.B1
    Kt = A1 + B1 @ P1
    S1F = np.einsum("ti,tj->tij", blocks.Sigma1, blocks.F)
    FF = np.einsum("ti,tj->tij", blocks.F, blocks.F)
    S2S2 = np.einsum("ti,tj->tij", blocks.Sigma2, blocks.Sigma2)

    rhs = quadratic_rhs(Kt - S1F, -FF, S2S2, sign=1.0)

    out = integrate_rk4(rhs, np.zeros((2, 2)), grid, False, "cov",
                        guard=lambda n, t, v: CovarianceError(f"{n} blew up at t={t:.6g}"),
                        cls=MatTrajectory)
    v = out.values
    asym = np.max(np.abs(v[:, 0, 1] - v[:, 1, 0]))
    if asym > sym_tol:
        raise CovarianceError(f"error covariance lost symmetry by {asym:.3g}")
    lam = np.linalg.eigvalsh(0.5 * (v + np.swapaxes(v, -1, -2)))
    if lam.min() < eig_tol:
        k = int(np.argmin(lam.min(axis=1)))
        raise CovarianceError(f"error covariance has eigenvalue {lam.min():.3g} at t={grid.nodes[k]:.6g}")
    return out


# exponential representation

def riccati_exponential(K: np.ndarray, Q: np.ndarray, S: np.ndarray, G: np.ndarray,
                        tau: float, cond_limit: float = 1e12) -> np.ndarray:
    """Solution at time-to-go tau of P' + P K + K^T P + P Q P + S = 0, P(T) = G,
    with constant K, symmetric Q, S, G.

    Writes P = G + D and uses the Hamiltonian exponential of the equation for D.
    """
    n = K.shape[0]
    Kt = K + Q @ G
    St = G @ K + K.T @ G + G @ Q @ G + S
    H = np.block([[Kt, Q], [-St, -Kt.T]])
    E = expm(H * tau)
    U = E[n:, n:]
    V = E[n:, :n]
    c = np.linalg.cond(U)
    if not np.isfinite(c) or c > cond_limit:
        raise SingularRepresentation(f"sub-block condition number {c:.3g} at time-to-go {tau:.6g}")
    return G - np.linalg.solve(U, V)


def riccati_via_matrix_exponential(blocks: BlockCoefficients, t: float) -> np.ndarray:
    """Pi1(t) from the exponential representation; blocks must be time invariant."""
    if not blocks.is_time_invariant():
        raise ValueError("exponential representation needs constant blocks; use blocks.frozen()")
    tau = blocks.grid.T - t
    if tau < 0:
        raise ValueError(f"t={t} outside [0, T]")
    if tau == 0:
        return blocks.M[-1].copy()
    return riccati_exponential(blocks.A1[0], blocks.B1[0], blocks.A3[0], blocks.M[0], tau)


def alt_riccatis_via_matrix_exponential(blocks: BlockCoefficients, t: float) -> tuple[np.ndarray, ...]:
    """The three alternative Riccatis at t by the same representation (constant blocks)."""
    if not blocks.is_time_invariant():
        raise ValueError("exponential representation needs constant blocks; use blocks.frozen()")
    tau = blocks.grid.T - t
    Abar, Dt, E, _, G = (x[0] for x in _leader_terms(blocks))
    A1, A3, B1, MT = blocks.A1[0], blocks.A3[0], blocks.B1[0], blocks.M[0]
    return (riccati_exponential(A1, B1, A3, MT, tau),
            riccati_exponential(Abar, B1, A3, MT, tau),
            riccati_exponential(Abar - E, B1 - Dt, A3 - G, MT, tau))


# diagnostics

def ode_residual(tr: Trajectory) -> float:
    """Max over interior nodes of |five-point derivative - right-hand side|.

    The right-hand side is the slope stored at each node. The residual is
    O(h^4) for an RK4 solution, so it measures the global integration error.
    """
    y, s, h = tr.values, tr.slopes, tr.grid.h
    if tr.grid.N < 4:
        raise ValueError("need at least 4 steps for the five-point stencil")
    d = (-y[4:] + 8.0 * y[3:-1] - 8.0 * y[1:-3] + y[:-4]) / (12.0 * h)
    return float(np.max(np.abs(d - s[2:-2])))


@dataclass(frozen=True)
class UniquenessReport:
    """Smallest eigenvalue per node of the three positivity conditions."""

    grid: TimeGrid
    min_eig: dict[str, np.ndarray]

    def strictly_positive(self) -> dict[str, bool]:
        return {k: bool(np.all(v > 0)) for k, v in self.min_eig.items()}

    def sign_table(self) -> dict[str, np.ndarray]:
        return {k: np.sign(v).astype(int) for k, v in self.min_eig.items()}


def check_uniqueness_conditions(blocks: BlockCoefficients, Pi1: MatTrajectory, Pi2: MatTrajectory,
                                Pi3: MatTrajectory, grid: TimeGrid) -> UniquenessReport:
    _check_grid(blocks.grid, grid)
    nodes = slice(0, None, 2)
    A3, B1 = blocks.A3[nodes], blocks.B1[nodes]
    Dt, G = blocks.D1D1[nodes], blocks.D2D2[nodes]
    p1 = Pi1.values
    s = p1 + Pi2.values
    s3 = s + Pi3.values
    mats = {
        "total": A3 - G + s3 @ (Dt - B1) @ s3,
        "partial": A3 - s @ B1 @ s,
        "first": A3 - p1 @ B1 @ p1,
    }
    return UniquenessReport(grid, {k: np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, -1, -2)))[:, 0]
                                   for k, m in mats.items()})


def _check_grid(a: TimeGrid, b: TimeGrid):
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")
