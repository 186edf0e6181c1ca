"""Euler-Maruyama simulation of the closed loop, cost estimates, paired
perturbation tests and filter diagnostics.

Every path owns a Philox stream keyed by (seed, path index), so results do not
depend on how paths are grouped into chunks or which worker runs a chunk.
Chunks are merged in index order and per-path reductions use numpy's pairwise
summation over the full path axis.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidParameter, SimulationDiverged
from .feedback import FollowerStage, OfflineSolution, follower_best_response
from .model import ModelSpec, TimeGrid
from .riccati import MatTrajectory, ScalarTrajectory

log = logging.getLogger(__name__)

CHUNK = 4096
THREADS_ENV = "STACKELBERG_LQ_THREADS"


@dataclass(frozen=True)
class NoiseSpec:
    seed: int
    paths: int
    antithetic: bool = False

    def __post_init__(self):
        if int(self.paths) != self.paths or self.paths < 1:
            raise InvalidParameter(f"path count must be a positive integer, got {self.paths}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidParameter(f"seed must be an unsigned 64-bit integer, got {self.seed}")


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit value, else the environment override, 0 meaning all cores."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            threads = int(raw)
        except ValueError:
            raise InvalidParameter(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if threads < 0:
        raise InvalidParameter(f"thread count must be >= 0, got {threads}")
    return threads or (os.cpu_count() or 1)


def brownian_increments(noise: NoiseSpec, grid: TimeGrid, start: int, stop: int
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Increments (dW, dWbar), each of shape (stop - start, N), for paths start..stop-1.

    With antithetic sampling path 2i and 2i+1 share stream i with opposite signs.
    """
    N = grid.N
    sq = np.sqrt(grid.h)
    z = np.empty((stop - start, 2 * N))
    for i, p in enumerate(range(start, stop)):
        stream, sign = (p // 2, -1.0 if p % 2 else 1.0) if noise.antithetic else (p, 1.0)
        key = np.array([noise.seed, stream], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        z[i] = gen.standard_normal(2 * N)
        if sign < 0:
            z[i] = -z[i]
    z *= sq
    return z[:, :N], z[:, N:]


def _chunks(paths: int, size: int = CHUNK) -> list[tuple[int, int]]:
    return [(s, min(s + size, paths)) for s in range(0, paths, size)]


def _run_chunks(noise: NoiseSpec, grid: TimeGrid, work: Callable[[int, np.ndarray, np.ndarray], dict],
                threads: int | None) -> list[dict]:
    spans = _chunks(noise.paths)

    def job(span):
        dW, dWb = brownian_increments(noise, grid, *span)
        return work(span[0], dW, dWb)

    n = min(resolve_threads(threads), len(spans))
    if n <= 1:
        return [job(s) for s in spans]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(job, spans))


class _Moments:
    """Per-node mean and M2 for several series, merged chunk by chunk in order."""

    def __init__(self):
        self.count = 0
        self.mean: dict[str, np.ndarray] = {}
        self.m2: dict[str, np.ndarray] = {}

    def merge(self, count: int, mean: dict, m2: dict):
        if self.count == 0:
            self.count, self.mean, self.m2 = count, dict(mean), dict(m2)
            return
        n = self.count + count
        for k in mean:
            d = mean[k] - self.mean[k]
            self.mean[k] = self.mean[k] + d * (count / n)
            self.m2[k] = self.m2[k] + m2[k] + d * d * (self.count * count / n)
        self.count = n

    def var(self, k: str) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean[k])
        return self.m2[k] / (self.count - 1)


def _chunk_moments(series: dict[str, np.ndarray]) -> tuple[dict, dict]:
    mean, m2 = {}, {}
    for k, v in series.items():
        mu = v.mean(axis=0)
        mean[k] = mu
        m2[k] = np.sum((v - mu) ** 2, axis=0)
    return mean, m2


def _default_checkpoints(grid: TimeGrid) -> list[int]:
    return sorted({int(round(q * grid.N)) for q in (0.2, 0.4, 0.6, 0.8, 1.0)})


def checkpoint_nodes(grid: TimeGrid, times: Sequence[float] | None) -> list[int]:
    """Map checkpoint times to grid nodes; default 0.2T, 0.4T, ..., T. The
    terminal node is always included."""
    if times is None:
        return _default_checkpoints(grid)
    out = [grid.N]
    for t in times:
        if not 0 <= t <= grid.T:
            raise InvalidParameter(f"checkpoint {t} outside [0, {grid.T}]")
        out.append(int(round(t / grid.h)))
    return sorted(set(out))


@dataclass
class PathEnsemble:
    """Monte Carlo output.

    Per-node ensemble means and variances of every series are kept for all
    paths; full trajectories only for the first `sample` paths; per-path
    values at checkpoint nodes in `snapshots`. The Brownian increments are
    not stored: brownian_increments(noise, grid, ...) regenerates them exactly.
    """

    kind: str
    grid: TimeGrid
    noise: NoiseSpec
    mean: dict[str, np.ndarray]
    var: dict[str, np.ndarray]
    checkpoints: list[int]
    snapshots: dict[str, np.ndarray]
    J1: np.ndarray
    J2: np.ndarray
    sample: dict[str, np.ndarray]
    checks: dict[str, float] = field(default_factory=dict)


def _coeffs_at_nodes(model: ModelSpec, grid: TimeGrid) -> dict[str, np.ndarray]:
    t = grid.nodes
    names = ("A", "B1", "B2", "alpha", "c", "c_bar", "f1", "L", "R", "l", "r",
             "L_bar", "R_bar", "l_bar", "r_bar")
    return {n: np.broadcast_to(getattr(model, n)(t), t.shape).astype(float) for n in names}


def _trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    w = np.full(grid.N + 1, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return w


class _Recorder:
    """Collects per-node series for one chunk plus the sampled paths."""

    def __init__(self, names: Sequence[str], n: int, N: int, start: int, keep: int, cps: list[int]):
        self.series = {k: np.empty((n, N + 1)) for k in names}
        self.keep = max(0, min(keep - start, n))
        self.cps = cps

    def put(self, k: int, **vals):
        for name, v in vals.items():
            self.series[name][:, k] = v

    def finish(self):
        mean, m2 = _chunk_moments(self.series)
        sample = {k: v[:self.keep].copy() for k, v in self.series.items()}
        snaps = {k: v[:, self.cps].copy() for k, v in self.series.items()}
        return mean, m2, sample, snaps


def _assemble(kind: str, grid: TimeGrid, noise: NoiseSpec, parts: list[dict], cps: list[int],
              check_reducers: dict[str, Callable]) -> PathEnsemble:
    mom = _Moments()
    for p in parts:
        mom.merge(p["n"], p["mean"], p["m2"])
    sample = {k: np.concatenate([p["sample"][k] for p in parts]) for k in parts[0]["sample"]}
    snaps = {k: np.concatenate([p["snaps"][k] for p in parts]) for k in parts[0]["snaps"]}
    J1 = np.concatenate([p["J1"] for p in parts])
    J2 = np.concatenate([p["J2"] for p in parts])
    checks = {k: red([p["checks"][k] for p in parts]) for k, red in check_reducers.items()}
    var = {k: mom.var(k) for k in mom.mean}
    return PathEnsemble(kind, grid, noise, mom.mean, var, cps, snaps, J1, J2, sample, checks)


EQUILIBRIUM_SERIES = ("x", "K", "xhat1", "xhat2", "xcheck1", "xcheck2", "v1", "v2",
                      "x0", "x1", "wtilde", "lam", "theta_hat")


def simulate_equilibrium(offline: OfflineSolution, noise: NoiseSpec, sample_paths: int = 8,
                         checkpoints: Sequence[float] | None = None,
                         threads: int | None = None) -> PathEnsemble:
    """Closed-loop equilibrium: state, augmented adjoint K, both filters,
    innovation, state decomposition, controls and cost integrands."""
    grid = offline.grid
    N, h = grid.N, grid.h
    cf = _coeffs_at_nodes(offline.model, grid)
    cl = offline.closed_loop
    gn = offline.gains
    P1, P2, P3, Phi = (offline.Pi1.values, offline.Pi2.values, offline.Pi3.values,
                       offline.Phi.values)
    X0 = offline.blocks.X0
    w = _trapezoid_weights(grid)
    m = offline.model
    cps = checkpoint_nodes(grid, checkpoints)

    def work(start, dW, dWb):
        n = dW.shape[0]
        rec = _Recorder(EQUILIBRIUM_SERIES, n, N, start, sample_paths, cps)
        x = np.full(n, X0[0])
        K = np.zeros(n)
        Xh = np.tile(X0, (n, 1))
        Xc = np.tile(X0, (n, 1))
        x0 = x.copy()
        x1 = np.zeros(n)
        Wt = np.zeros(n)
        J1 = np.zeros(n)
        J2 = np.zeros(n)
        decomp = 0.0
        xmax = float(np.max(np.abs(x)))
        innov = 0.0
        for k in range(N + 1):
            v2 = Xc @ gn.G2[k] + gn.b2[k]
            v1 = Xh @ gn.G1_hat[k] + Xc @ gn.G1_check[k] + gn.b1[k]
            lam = (P1[k, 0, 0] * x + P1[k, 0, 1] * K + Xh @ P2[k, 0] + Xc @ P3[k, 0] + Phi[k, 0])
            th = (P1[k, 1, 0] * x + P1[k, 1, 1] * K + Xh @ P2[k, 1] + Xc @ P3[k, 1] + Phi[k, 1])
            rec.put(k, x=x, K=K, xhat1=Xh[:, 0], xhat2=Xh[:, 1], xcheck1=Xc[:, 0],
                    xcheck2=Xc[:, 1], v1=v1, v2=v2, x0=x0, x1=x1, wtilde=Wt, lam=lam, theta_hat=th)
            J1 += w[k] * (cf["L"][k] * x * x + cf["R"][k] * v1 * v1
                          + 2 * cf["l"][k] * x + 2 * cf["r"][k] * v1)
            J2 += w[k] * (cf["L_bar"][k] * x * x + cf["R_bar"][k] * v2 * v2
                          + 2 * cf["l_bar"][k] * x + 2 * cf["r_bar"][k] * v2)
            decomp = max(decomp, float(np.max(np.abs(x - (x0 + x1)))))
            if k == N:
                break
            dw, dwb = dW[:, k], dWb[:, k]
            dWt = dw + cf["f1"][k] * (x - Xh[:, 0]) * h
            innov = max(innov, float(np.max(np.abs(dWt - (dw + cf["f1"][k] * (x - Xh[:, 0]) * h)))))
            ctrl = cf["B1"][k] * v1 + cf["B2"][k] * v2 + cf["alpha"][k]
            noise_x = cf["c"][k] * dw + cf["c_bar"][k] * dwb
            x_new = x + (cf["A"][k] * x + ctrl) * h + noise_x
            K = K + (cl.b[k] * lam + cl.a[k] * K) * h
            Xh = (Xh + (Xh @ cl.Mh[k].T + Xc @ cl.Mhc[k].T + cl.ch[k]) * h
                  + np.outer(dWt, cl.gain_hat[k]))
            Xc = Xc + (Xc @ cl.Mc[k].T + cl.cc[k]) * h + np.outer(dw, offline.blocks.Sigma1[2 * k])
            x0 = x0 + cf["A"][k] * x0 * h + noise_x
            x1 = x1 + (cf["A"][k] * x1 + ctrl) * h
            Wt = Wt + dWt
            x = x_new
            xmax = max(xmax, float(np.max(np.abs(x))))
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(Xh)) and np.all(np.isfinite(K))):
                bad = int(np.flatnonzero(~(np.isfinite(x) & np.isfinite(K)
                                           & np.all(np.isfinite(Xh), axis=1)))[0])
                raise SimulationDiverged(start + bad, k + 1)
        J1 = 0.5 * (J1 + m.M * x * x + 2 * m.m * x)
        J2 = 0.5 * (J2 + m.M_bar * x * x + 2 * m.m_bar * x)
        mean, m2, sample, snaps = rec.finish()
        return dict(n=n, mean=mean, m2=m2, sample=sample, snaps=snaps, J1=J1, J2=J2,
                    checks=dict(decomposition=decomp, max_abs_x=xmax, innovation=innov))

    parts = _run_chunks(noise, grid, work, threads)
    ens = _assemble("equilibrium", grid, noise, parts, cps,
                    {"decomposition": max, "max_abs_x": max, "innovation": max})
    return ens


FOLLOWER_SERIES = ("x", "xhat", "v1", "v2", "wtilde")


def simulate_follower_stage(stage: FollowerStage, model: ModelSpec, noise: NoiseSpec,
                            sample_paths: int = 8, checkpoints: Sequence[float] | None = None,
                            threads: int | None = None) -> PathEnsemble:
    """Follower's filter and feedback against a deterministic leader control."""
    grid = stage.Pi.grid
    N, h = grid.N, grid.h
    cf = _coeffs_at_nodes(model, grid)
    P = stage.P.values
    w = _trapezoid_weights(grid)
    cps = checkpoint_nodes(grid, checkpoints)

    def work(start, dW, dWb):
        n = dW.shape[0]
        rec = _Recorder(FOLLOWER_SERIES, n, N, start, sample_paths, cps)
        x = np.full(n, model.x0)
        xh = x.copy()
        Wt = np.zeros(n)
        J1 = np.zeros(n)
        J2 = np.zeros(n)
        for k in range(N + 1):
            v1 = stage.gain[k] * xh + stage.offset[k]
            v2 = np.full(n, stage.v2[k])
            rec.put(k, x=x, xhat=xh, v1=v1, v2=v2, wtilde=Wt)
            J1 += w[k] * (cf["L"][k] * x * x + cf["R"][k] * v1 * v1
                          + 2 * cf["l"][k] * x + 2 * cf["r"][k] * v1)
            J2 += w[k] * (cf["L_bar"][k] * x * x + cf["R_bar"][k] * v2 * v2
                          + 2 * cf["l_bar"][k] * x + 2 * cf["r_bar"][k] * v2)
            if k == N:
                break
            dw, dwb = dW[:, k], dWb[:, k]
            f = cf["f1"][k]
            dWt = dw + f * (x - xh) * h
            drift_u = cf["B1"][k] * v1 + cf["B2"][k] * v2 + cf["alpha"][k]
            x_new = x + (cf["A"][k] * x + drift_u) * h + cf["c"][k] * dw + cf["c_bar"][k] * dwb
            xh = xh + (cf["A"][k] * xh + drift_u) * h + (cf["c"][k] + f * P[k]) * dWt
            Wt = Wt + dWt
            x = x_new
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xh))):
                bad = int(np.flatnonzero(~(np.isfinite(x) & np.isfinite(xh)))[0])
                raise SimulationDiverged(start + bad, k + 1)
        J1 = 0.5 * (J1 + model.M * x * x + 2 * model.m * x)
        J2 = 0.5 * (J2 + model.M_bar * x * x + 2 * model.m_bar * x)
        mean, m2, sample, snaps = rec.finish()
        return dict(n=n, mean=mean, m2=m2, sample=sample, snaps=snaps, J1=J1, J2=J2, checks={})

    parts = _run_chunks(noise, grid, work, threads)
    return _assemble("follower_stage", grid, noise, parts, cps, {})


@dataclass(frozen=True)
class CostEstimate:
    J1: float
    J1_se: float
    J2: float
    J2_se: float
    paths: int


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    mu = float(np.mean(v))
    if v.size < 2 or np.all(v == v[0]):
        return mu, 0.0
    return mu, float(np.std(v, ddof=1) / np.sqrt(v.size))


def estimate_costs(ensemble: PathEnsemble) -> CostEstimate:
    """Sample means and standard errors of the per-path quadratures of J1, J2."""
    j1, s1 = _mean_se(ensemble.J1)
    j2, s2 = _mean_se(ensemble.J2)
    return CostEstimate(j1, s1, j2, s2, ensemble.J1.size)


# paired perturbation tests

@dataclass(frozen=True)
class PerturbationSpec:
    """A deviation of one player from the equilibrium rule.

    shift: v += eps;  ramp: v += eps * t / T;  gain: feedback row scaled by (1 + eps).
    For the leader the row acts on the leader-side estimate; for the follower on
    its own state estimate.
    """

    player: str
    kind: str
    eps: float

    def __post_init__(self):
        if self.player not in ("leader", "follower"):
            raise InvalidParameter(f"player must be leader or follower, got {self.player!r}")
        if self.kind not in ("shift", "ramp", "gain"):
            raise InvalidParameter(f"kind must be shift, ramp or gain, got {self.kind!r}")

    @property
    def label(self) -> str:
        return f"{self.player}:{self.kind}:{self.eps:+g}"

    def additive(self, t: np.ndarray, T: float) -> np.ndarray:
        if self.kind == "shift":
            return np.full_like(t, self.eps)
        if self.kind == "ramp":
            return self.eps * t / T
        return np.zeros_like(t)

    @property
    def gain_factor(self) -> float:
        return 1.0 + self.eps if self.kind == "gain" else 1.0


@dataclass(frozen=True)
class _Strategy:
    """Node-sampled leader rule (g, g0) and follower rule parameters."""

    g: np.ndarray
    g0: np.ndarray
    kappa: np.ndarray
    beta: np.ndarray
    fb_gain: np.ndarray
    shift1: np.ndarray


def _strategy(offline: OfflineSolution, pert: PerturbationSpec | None) -> _Strategy:
    grid, model = offline.grid, offline.model
    th = grid.half_nodes
    hg = offline.half_gains
    g, g0 = hg.G2, hg.b2
    lead = pert is not None and pert.player == "leader"
    if lead:
        g = g * pert.gain_factor
        g0 = g0 + pert.additive(th, grid.T)
    kappa, beta = follower_best_response(offline, g, g0)
    tn = grid.nodes
    fb = np.broadcast_to(-model.B1(tn) * offline.Pi.values / model.R(tn), tn.shape).copy()
    shift1 = np.zeros_like(tn)
    if pert is not None and pert.player == "follower":
        fb = fb * pert.gain_factor
        shift1 = shift1 + pert.additive(tn, grid.T)
    return _Strategy(g[0::2], g0[0::2], kappa.values, beta.values, fb, shift1)


def _simulate_strategies(offline: OfflineSolution, strategies: list[_Strategy], dW: np.ndarray,
                         dWb: np.ndarray, start: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Costs per path for each strategy profile, all driven by the same increments.

    The follower filters with its own Kalman recursion using the realized
    controls; the leader's rule acts on the leader-side filter recursion Z,
    which depends on W only.
    """
    grid, model = offline.grid, offline.model
    N, h = grid.N, grid.h
    cf = _coeffs_at_nodes(model, grid)
    P = offline.P.values
    cl = offline.closed_loop
    Sig1 = offline.blocks.Sigma1[0::2]
    w = _trapezoid_weights(grid)
    X0 = offline.blocks.X0
    n = dW.shape[0]
    out = []
    for s in strategies:
        x = np.full(n, model.x0)
        xh = x.copy()
        Z = np.tile(X0, (n, 1))
        J1 = np.zeros(n)
        J2 = np.zeros(n)
        for k in range(N + 1):
            v2 = Z @ s.g[k] + s.g0[k]
            theta = Z @ s.kappa[k] + s.beta[k]
            v1 = s.fb_gain[k] * xh - (cf["B1"][k] * theta + cf["r"][k]) / cf["R"][k] + s.shift1[k]
            J1 += w[k] * (cf["L"][k] * x * x + cf["R"][k] * v1 * v1
                          + 2 * cf["l"][k] * x + 2 * cf["r"][k] * v1)
            J2 += w[k] * (cf["L_bar"][k] * x * x + cf["R_bar"][k] * v2 * v2
                          + 2 * cf["l_bar"][k] * x + 2 * cf["r_bar"][k] * v2)
            if k == N:
                break
            dw, dwb = dW[:, k], dWb[:, k]
            f = cf["f1"][k]
            dWt = dw + f * (x - xh) * h
            drift_u = cf["B1"][k] * v1 + cf["B2"][k] * v2 + cf["alpha"][k]
            x_new = x + (cf["A"][k] * x + drift_u) * h + cf["c"][k] * dw + cf["c_bar"][k] * dwb
            xh = xh + (cf["A"][k] * xh + drift_u) * h + (cf["c"][k] + f * P[k]) * dWt
            Z = Z + (Z @ cl.Mc[k].T + cl.cc[k]) * h + np.outer(dw, Sig1[k])
            x = x_new
            if not np.all(np.isfinite(x)):
                raise SimulationDiverged(start + int(np.flatnonzero(~np.isfinite(x))[0]), k + 1)
        J1 = 0.5 * (J1 + model.M * x * x + 2 * model.m * x)
        J2 = 0.5 * (J2 + model.M_bar * x * x + 2 * model.m_bar * x)
        out.append((J1, J2))
    return out


@dataclass(frozen=True)
class PerturbationResult:
    spec: PerturbationSpec
    J_baseline: float
    dJ: float
    dJ_se: float
    dJ_other: float

    @property
    def ci(self) -> tuple[float, float]:
        return self.dJ - 1.96 * self.dJ_se, self.dJ + 1.96 * self.dJ_se

    def passes(self, rel_tol: float = 1e-4) -> bool:
        """Deviation does not pay: mean change nonnegative, and the lower 95% bound
        no worse than rel_tol times the baseline cost."""
        return self.dJ >= 0 and self.ci[0] >= -rel_tol * abs(self.J_baseline)


def perturb_and_compare(offline: OfflineSolution, noise: NoiseSpec,
                        perturbations: Sequence[PerturbationSpec],
                        threads: int | None = None) -> list[PerturbationResult]:
    """Paired comparison of each deviation against the equilibrium on common noise.

    The deviating player's cost is reported as dJ (J2 for the leader, J1 for
    the follower). Against a leader deviation the follower keeps its
    best-response rule, so its offset responds to the deviated leader rule.
    """
    grid = offline.grid
    strategies = [_strategy(offline, None)] + [_strategy(offline, p) for p in perturbations]

    def work(start, dW, dWb):
        return {"costs": _simulate_strategies(offline, strategies, dW, dWb, start)}

    parts = _run_chunks(noise, grid, work, threads)
    costs = [tuple(np.concatenate([p["costs"][i][j] for p in parts]) for j in range(2))
             for i in range(len(strategies))]
    base = costs[0]
    results = []
    for p, c in zip(perturbations, costs[1:]):
        own, other = (1, 0) if p.player == "leader" else (0, 1)
        d = c[own] - base[own]
        mu, se = _mean_se(d)
        results.append(PerturbationResult(p, float(np.mean(base[own])), mu, se,
                                          float(np.mean(c[other] - base[other]))))
    return results


DEFAULT_PERTURBATIONS = (
    PerturbationSpec("leader", "shift", 0.1),
    PerturbationSpec("leader", "shift", -0.1),
    PerturbationSpec("leader", "ramp", 0.1),
    PerturbationSpec("leader", "ramp", -0.1),
    PerturbationSpec("leader", "gain", 0.2),
    PerturbationSpec("follower", "shift", 0.1),
    PerturbationSpec("follower", "shift", -0.1),
    PerturbationSpec("follower", "gain", 0.2),
)


# diagnostics

@dataclass
class FilterStats:
    kind: str
    times: np.ndarray
    rows: dict[str, np.ndarray]
    innovation_mean: float
    innovation_var: float
    innovation_mean_bound: float
    paths: int


def filter_consistency_stats(ensemble: PathEnsemble, P: ScalarTrajectory | None = None,
                             cov: MatTrajectory | None = None) -> FilterStats:
    """Checkpoint moments of the estimation errors compared with the
    Riccati error variances, plus moments of the innovation at T."""
    cps = ensemble.checkpoints
    t = ensemble.grid.nodes[cps]
    s = ensemble.snapshots
    M = ensemble.J1.size
    rows: dict[str, np.ndarray] = {}
    if ensemble.kind == "follower_stage":
        e = s["x"] - s["xhat"]
        rows["mean_err"] = e.mean(axis=0)
        rows["orthogonality"] = np.mean(e * s["xhat"], axis=0) - rows["mean_err"] * s["xhat"].mean(axis=0)
        rows["mse"] = np.mean(e * e, axis=0)
        if P is not None:
            rows["P"] = P.values[cps]
            rows["mse_rel_err"] = np.abs(rows["mse"] - rows["P"]) / np.where(rows["P"] != 0, rows["P"], 1.0)
    else:
        e1 = s["x"] - s["xhat1"]
        e2 = s["K"] - s["xhat2"]
        rows["mean_err_1"] = e1.mean(axis=0)
        rows["mean_err_2"] = e2.mean(axis=0)
        c11 = np.var(e1, axis=0, ddof=1) if M > 1 else np.zeros(len(cps))
        rows["cov_11"] = c11
        rows["cov_12"] = (np.mean(e1 * e2, axis=0) - rows["mean_err_1"] * rows["mean_err_2"]) * (M / max(M - 1, 1))
        rows["cov_22"] = np.var(e2, axis=0, ddof=1) if M > 1 else np.zeros(len(cps))
        rows["orthogonality"] = np.mean(e1 * s["xhat1"], axis=0) - rows["mean_err_1"] * s["xhat1"].mean(axis=0)
        rows["mean_check_err_1"] = np.mean(s["x"] - s["xcheck1"], axis=0)
        rows["mean_check_err_2"] = np.mean(s["K"] - s["xcheck2"], axis=0)
        if cov is not None:
            rows["P_11"] = cov.values[cps, 0, 0]
            rows["P_12"] = cov.values[cps, 0, 1]
            rows["P_22"] = cov.values[cps, 1, 1]
            ref = np.where(rows["P_11"] != 0, rows["P_11"], 1.0)
            rows["cov_11_rel_err"] = np.abs(c11 - rows["P_11"]) / ref
    wt = s["wtilde"][:, -1] if cps[-1] == ensemble.grid.N else None
    if wt is None:
        wt_mean, wt_var = float("nan"), float("nan")
    else:
        wt_mean = float(np.mean(wt))
        wt_var = float(np.var(wt, ddof=1)) if M > 1 else 0.0
    return FilterStats(ensemble.kind, t, rows, wt_mean, wt_var, 3 * np.sqrt(ensemble.grid.T / M), M)
