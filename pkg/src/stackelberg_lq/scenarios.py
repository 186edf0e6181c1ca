"""Closed-form special case, the advertising example end to end, and parameter sweeps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import OffsetBlowUp, SpecialCaseInapplicable
from .feedback import FeedbackGains, OfflineSolution, solve_offline
from .model import ModelSpec, TimeGrid, assemble_blocks, from_advertising, validate, Diagnostics
from .montecarlo import (CostEstimate, FilterStats, NoiseSpec, PathEnsemble, estimate_costs,
                         filter_consistency_stats, simulate_equilibrium)
from .riccati import (MatTrajectory, ScalarTrajectory, VecTrajectory, integrate_rk4, quadratic_rhs,
                      solve_follower_riccati)


@dataclass(frozen=True)
class SpecialCaseSolution:
    """Equilibrium when the follower observes no state (f1 = 0) and has no
    quadratic state cost (L = 0, M = 0), with L_bar = 0.

    The follower's rule is open loop, v1 = -(B1 theta_hat + r) / R; the
    leader's is v2 = -(r_bar + B2 Pibar2_11 xhat + B2 Phihat_1) / R_bar.
    """

    grid: TimeGrid
    Pi: ScalarTrajectory
    theta_hat: ScalarTrajectory
    Pi1_bar: MatTrajectory
    Pi2_bar: MatTrajectory
    Phi_hat: VecTrajectory
    gains: FeedbackGains

    def leader_control(self, k: int, xhat):
        return self.gains.G2[k, 0] * np.asarray(xhat) + self.gains.b2[k]

    def follower_control(self, k: int):
        return self.gains.b1[k]


def _require_special_case(model: ModelSpec, grid: TimeGrid):
    t = grid.half_nodes
    bad = [n for n in ("f1", "L", "L_bar") if np.any(getattr(model, n)(t) != 0)]
    if model.M != 0:
        bad.append("M")
    if bad:
        raise SpecialCaseInapplicable(f"special case needs f1 = L = L_bar = M = 0; nonzero: {bad}")


def special_case_solution(model: ModelSpec, grid: TimeGrid) -> SpecialCaseSolution:
    """Solve the special case by its own reduced equations."""
    _require_special_case(model, grid)
    validate(model, grid)
    t = grid.half_nodes
    Pi = solve_follower_riccati(model, grid)
    A = np.broadcast_to(model.A(t), t.shape)
    l = np.broadcast_to(model.l(t), t.shape)

    def theta_rhs(j, y):
        return -(A[j] * y + l[j])

    theta = integrate_rk4(theta_rhs, model.m, grid, True, "theta_hat", guard=OffsetBlowUp,
                          cls=ScalarTrajectory)

    blk = assemble_blocks(model, Pi.half(), grid)
    zero = np.zeros_like(blk.A1)
    MT = blk.M[-1]
    Dt = blk.D1D1
    Pi1_bar = integrate_rk4(quadratic_rhs(blk.A1, blk.B1, zero), MT, grid, True, "Pi1_bar",
                            cls=MatTrajectory)
    BD = blk.B1 - Dt
    Pi2_bar = integrate_rk4(quadratic_rhs(blk.A1, BD, zero), MT, grid, True, "Pi2_bar",
                            cls=MatTrajectory)
    P2 = Pi2_bar.half()
    rb = (blk.r_bar / blk.R_bar)[:, None]
    Amat = P2 @ BD + blk.A1
    forcing = (-np.einsum("tij,tj->ti", P2, blk.D1 * rb) + np.einsum("tij,tj->ti", P2, blk.C1)
               + blk.C2)

    def phi_rhs(j, y):
        return -(Amat[j] @ y + forcing[j])

    Phi_hat = integrate_rk4(phi_rhs, blk.M_T, grid, True, "Phi_hat", guard=OffsetBlowUp,
                            cls=VecTrajectory)

    tn = grid.nodes
    B2, Rb, rbar = model.B2(tn), model.R_bar(tn), model.r_bar(tn)
    B1, R, r = model.B1(tn), model.R(tn), model.r(tn)
    n = tn.shape
    G2 = np.zeros(n + (2,))
    G2[:, 0] = -B2 * Pi2_bar.values[:, 0, 0] / Rb
    b2 = np.broadcast_to(-(rbar + B2 * Phi_hat.values[:, 0]) / Rb, n).copy()
    b1 = np.broadcast_to(-(B1 * theta.values + r) / R, n).copy()
    gains = FeedbackGains(G2, b2, np.zeros(n + (2,)), np.zeros(n + (2,)), b1)
    return SpecialCaseSolution(grid, Pi, theta, Pi1_bar, Pi2_bar, Phi_hat, gains)


def compare_special_case(sc: SpecialCaseSolution, offline: OfflineSolution) -> dict[str, float]:
    """Max-norm gaps between the special-case rules and the general equilibrium gains."""
    g = offline.gains
    s = sc.gains
    return {
        "G2": float(np.max(np.abs(g.G2 - s.G2))),
        "b2": float(np.max(np.abs(g.b2 - s.b2))),
        "G1_hat": float(np.max(np.abs(g.G1_hat - s.G1_hat))),
        "G1_check": float(np.max(np.abs(g.G1_check - s.G1_check))),
        "b1": float(np.max(np.abs(g.b1 - s.b1))),
        "Pi": float(np.max(np.abs(offline.Pi.values))),
        "theta_hat_vs_Phi2": float(np.max(np.abs(sc.theta_hat.values - offline.Phi.values[:, 1]))),
    }


@dataclass
class ScenarioRun:
    model: ModelSpec
    diagnostics: Diagnostics
    offline: OfflineSolution
    ensemble: PathEnsemble
    costs: CostEstimate
    filter_stats: FilterStats


def run_model(model: ModelSpec, grid: TimeGrid, noise: NoiseSpec, sample_paths: int = 8,
              checkpoints: Sequence[float] | None = None, threads: int | None = None) -> ScenarioRun:
    """Model -> offline equations -> closed-loop simulation -> diagnostics."""
    diag = validate(model, grid)
    offline = solve_offline(model, grid)
    ens = simulate_equilibrium(offline, noise, sample_paths=sample_paths, checkpoints=checkpoints,
                               threads=threads)
    return ScenarioRun(model, diag, offline, ens, estimate_costs(ens),
                       filter_consistency_stats(ens, offline.P, offline.cov))


def advertising_scenario(params: Mapping[str, float], grid: TimeGrid, noise: NoiseSpec,
                         **kw) -> ScenarioRun:
    return run_model(from_advertising(params), grid, noise, **kw)


SWEEP_SERIES = ("v1", "v2", "x", "xhat1", "xcheck1")


@dataclass
class SweepResult:
    """Ensemble means (and their standard errors) per swept value."""

    name: str
    values: list[float]
    grid: TimeGrid
    mean: dict[str, np.ndarray]
    se: dict[str, np.ndarray]

    def ordering(self, series: str, increasing: bool, node: int = 0, z: float = 2.0) -> dict:
        """Check a strict ordering of series means at one node across values,
        requiring every consecutive gap to exceed z combined standard errors."""
        mu = self.mean[series][:, node]
        se = self.se[series][:, node]
        gaps = np.diff(mu) if increasing else -np.diff(mu)
        need = z * np.sqrt(se[:-1] ** 2 + se[1:] ** 2)
        return dict(means=mu, se=se, gaps=gaps, required=need, holds=bool(np.all(gaps > need)))


def parameter_sweep(base: Mapping[str, float], name: str, values: Sequence[float], grid: TimeGrid,
                    noise: NoiseSpec, threads: int | None = None) -> SweepResult:
    """Re-run the advertising example for each value of one parameter, on shared noise."""
    if name not in base:
        raise KeyError(f"unknown sweep parameter {name!r}")
    values = [float(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    means = {s: [] for s in SWEEP_SERIES}
    ses = {s: [] for s in SWEEP_SERIES}
    for v in values:
        p = dict(base)
        p[name] = v
        run = advertising_scenario(p, grid, noise, sample_paths=0, threads=threads)
        M = run.ensemble.J1.size
        for s in SWEEP_SERIES:
            means[s].append(run.ensemble.mean[s])
            ses[s].append(np.sqrt(run.ensemble.var[s] / M))
    return SweepResult(name, values, grid, {k: np.array(v) for k, v in means.items()},
                       {k: np.array(v) for k, v in ses.items()})
