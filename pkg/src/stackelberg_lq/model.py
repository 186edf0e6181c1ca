"""Model data: time grid, coefficient functions, game coefficients and 2x2 blocks."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .errors import HardViolation, InvalidParameter


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*T/N, k = 0..N."""

    T: float
    N: int

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise InvalidParameter(f"horizon T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 2:
            raise InvalidParameter(f"step count N must be an integer >= 2, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.h
        t[-1] = self.T
        return t

    @property
    def half_nodes(self) -> np.ndarray:
        """Nodes and step midpoints, 2N+1 points; even indices are grid nodes."""
        t = np.arange(2 * self.N + 1) * (0.5 * self.h)
        t[-1] = self.T
        return t

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.N * factor)


class CoefficientFn:
    """Deterministic scalar coefficient on [0, T]: a constant or a table
    of (t, value) pairs, linearly interpolated between table nodes."""

    __slots__ = ("_const", "_t", "_v")

    def __init__(self, value: float | None = None,
                 table: Sequence[tuple[float, float]] | None = None):
        if (value is None) == (table is None):
            raise InvalidParameter("give exactly one of value or table")
        if table is None:
            value = float(value)
            if not np.isfinite(value):
                raise InvalidParameter(f"coefficient value must be finite, got {value}")
            self._const, self._t, self._v = value, None, None
            return
        arr = np.asarray(table, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
            raise InvalidParameter("table must be a sequence of at least two (t, value) pairs")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameter("table entries must be finite")
        if np.any(np.diff(arr[:, 0]) <= 0):
            raise InvalidParameter("table nodes must be strictly increasing")
        self._const = None
        self._t = arr[:, 0].copy()
        self._v = arr[:, 1].copy()

    @classmethod
    def of(cls, x) -> "CoefficientFn":
        if isinstance(x, CoefficientFn):
            return x
        if isinstance(x, (list, tuple)):
            return cls(table=x)
        return cls(value=x)

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    @property
    def constant(self) -> float:
        if self._const is None:
            raise ValueError("tabulated coefficient has no single constant value")
        return self._const

    @property
    def table(self) -> list[tuple[float, float]] | None:
        if self._t is None:
            return None
        return [(float(a), float(b)) for a, b in zip(self._t, self._v)]

    def covers(self, T: float) -> bool:
        return self._t is None or (self._t[0] <= 0.0 and self._t[-1] >= T)

    def __call__(self, t):
        if self._const is not None:
            if np.ndim(t) == 0:
                return self._const
            return np.full(np.shape(t), self._const)
        out = np.interp(t, self._t, self._v)
        return float(out) if np.ndim(t) == 0 else out

    def scaled(self, k: float) -> "CoefficientFn":
        if self._const is not None:
            return CoefficientFn(k * self._const)
        return CoefficientFn(table=list(zip(self._t, k * self._v)))

    def __eq__(self, other):
        if not isinstance(other, CoefficientFn):
            return NotImplemented
        if self.is_constant != other.is_constant:
            return False
        if self.is_constant:
            return self._const == other._const
        return np.array_equal(self._t, other._t) and np.array_equal(self._v, other._v)

    def __hash__(self):
        return hash(self._const if self.is_constant else tuple(self._v))

    def __repr__(self):
        if self.is_constant:
            return f"CoefficientFn({self._const!r})"
        return f"CoefficientFn(table={self.table!r})"


# fields holding CoefficientFn values; the rest are plain floats
_FUNCTION_FIELDS = ("A", "B1", "B2", "alpha", "c", "c_bar", "f1", "f2", "g",
                    "L", "R", "l", "r", "L_bar", "R_bar", "l_bar", "r_bar")
_SCALAR_FIELDS = ("M", "m", "M_bar", "m_bar", "x0")


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the state, the two observations and both cost functionals.

    State:      dx = (A x + B1 v1 + B2 v2 + alpha) dt + c dW + c_bar dW_bar
    Follower:   dY1 = (f1 x + g) dt + dW
    Leader:     dY2 = (f2 + v2) dt + dW
    Costs J1 (weights L, R, l, r, M, m) and J2 (barred weights) are
    1/2 E[ int (L x^2 + R v^2 + 2 l x + 2 r v) dt + M x_T^2 + 2 m x_T ].

    Plain numbers are accepted for every coefficient and wrapped as constants.
    """

    A: CoefficientFn = 0.0
    B1: CoefficientFn = 0.0
    B2: CoefficientFn = 0.0
    alpha: CoefficientFn = 0.0
    c: CoefficientFn = 0.0
    c_bar: CoefficientFn = 0.0
    f1: CoefficientFn = 0.0
    f2: CoefficientFn = 0.0
    g: CoefficientFn = 0.0
    L: CoefficientFn = 0.0
    R: CoefficientFn = 1.0
    l: CoefficientFn = 0.0
    r: CoefficientFn = 0.0
    M: float = 0.0
    m: float = 0.0
    L_bar: CoefficientFn = 0.0
    R_bar: CoefficientFn = 1.0
    l_bar: CoefficientFn = 0.0
    r_bar: CoefficientFn = 0.0
    M_bar: float = 0.0
    m_bar: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        for name in _FUNCTION_FIELDS:
            object.__setattr__(self, name, CoefficientFn.of(getattr(self, name)))
        for name in _SCALAR_FIELDS:
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise InvalidParameter(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, v)

    def replace(self, **changes) -> "ModelSpec":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return ModelSpec(**kw)

    def is_time_invariant(self) -> bool:
        return all(getattr(self, n).is_constant for n in _FUNCTION_FIELDS)


ADVERTISING_KEYS = ("beta1", "beta2", "delta", "gamma1", "gamma2", "sigma", "sigma_bar",
                    "kappa1", "kappa2", "theta1", "theta2", "mu1", "mu2", "M1", "M2",
                    "x0", "f1")

# reference parameter set of the advertising example
ADVERTISING_DEFAULTS = dict(beta1=0.2, beta2=0.4, delta=0.5, gamma1=0.6, gamma2=0.5,
                            sigma=0.2, sigma_bar=0.4, kappa1=0.6, kappa2=0.5,
                            theta1=0.4, theta2=0.6, mu1=0.3, mu2=0.5, M1=0.8, M2=1.0,
                            x0=0.01, f1=0.6)


def from_advertising(params: Mapping[str, float]) -> ModelSpec:
    """Map the advertising parameters (goodwill state x, follower rate v1, leader rate v2)
    onto the general coefficients. Missing keys are an error."""
    unknown = set(params) - set(ADVERTISING_KEYS)
    if unknown:
        raise InvalidParameter(f"unknown advertising parameters: {sorted(unknown)}")
    missing = set(ADVERTISING_KEYS) - set(params)
    if missing:
        raise InvalidParameter(f"missing advertising parameters: {sorted(missing)}")
    p = {k: float(v) for k, v in params.items()}
    for k, v in p.items():
        if not np.isfinite(v):
            raise InvalidParameter(f"{k} must be finite, got {v}")
    if p["mu1"] <= 0 or p["mu2"] <= 0:
        raise InvalidParameter(f"mu1 and mu2 must be positive, got {p['mu1']}, {p['mu2']}")
    return ModelSpec(
        A=-p["delta"], B1=-p["beta1"], B2=p["beta2"], alpha=0.0,
        c=p["sigma"], c_bar=p["sigma_bar"], f1=p["f1"], f2=0.0, g=0.0,
        L=-2 * p["kappa1"], R=p["mu1"], l=-p["theta1"], r=-p["gamma1"],
        M=2 * p["M1"], m=0.0,
        L_bar=-2 * p["kappa2"], R_bar=p["mu2"], l_bar=-p["theta2"], r_bar=-p["gamma2"],
        M_bar=2 * p["M2"], m_bar=0.0,
        x0=p["x0"],
    )


@dataclass
class Diagnostics:
    """Outcome of validate(): which standing assumptions hold on the grid."""

    holds: dict[str, bool] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    hard_violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.hard_violations


def validate(model: ModelSpec, grid: TimeGrid, raise_on_hard: bool = True) -> Diagnostics:
    """Check the standing assumptions on the grid nodes.

    A1 (finite coefficients) and A3/A4 (R, R_bar nonzero) are hard requirements.
    Sign conditions of A2 (L, L_bar, R, R_bar, M, M_bar >= 0) and negative linear
    weights are reported as warnings; the Riccati solvers detect actual failure.
    """
    t = grid.half_nodes
    d = Diagnostics()
    finite = True
    for name in _FUNCTION_FIELDS:
        fn = getattr(model, name)
        if not fn.covers(grid.T):
            d.warnings.append(f"{name} table does not cover [0, T]; end values are held")
        if not np.all(np.isfinite(fn(t))):
            finite = False
            d.hard_violations.append(f"A1: {name} not finite on the grid")
    d.holds["A1"] = finite

    a2 = True
    for name in ("L", "L_bar", "R", "R_bar"):
        if np.any(getattr(model, name)(t) < 0):
            a2 = False
            d.warnings.append(f"{name}<0")
    for name in ("M", "M_bar"):
        if getattr(model, name) < 0:
            a2 = False
            d.warnings.append(f"{name}<0")
    d.holds["A2"] = a2
    for name in ("l", "r", "l_bar", "r_bar"):
        if np.any(getattr(model, name)(t) < 0):
            d.warnings.append(f"{name}<0")

    for tag, name in (("A3", "R"), ("A4", "R_bar")):
        vals = getattr(model, name)(t)
        ok = bool(np.all(vals != 0))
        d.holds[tag] = ok
        if not ok:
            d.hard_violations.append(f"{tag}: {name} vanishes on the grid")
    if raise_on_hard and d.hard_violations:
        raise HardViolation("; ".join(d.hard_violations))
    return d


def is_symmetric(m: np.ndarray, tol: float = 0.0) -> bool:
    """Symmetry predicate for a 2x2 matrix or a stack of them."""
    m = np.asarray(m)
    return bool(np.all(np.abs(m - np.swapaxes(m, -1, -2)) <= tol))


def _diag(a, b):
    a = np.asarray(a, dtype=float)
    out = np.zeros(a.shape + (2, 2))
    out[..., 0, 0] = a
    out[..., 1, 1] = b
    return out


def _vec(a, b, shape):
    out = np.zeros(shape + (2,))
    out[..., 0] = a
    out[..., 1] = b
    return out


@dataclass(frozen=True)
class BlockCoefficients:
    """Augmented-system blocks for X = (x, K), sampled on the half grid.

    Matrix-valued arrays have shape (2N+1, 2, 2), vector-valued (2N+1, 2);
    index 2k is node t_k and 2k+1 is the midpoint of step k. The scalar
    coefficients needed downstream (R_bar, r_bar, ...) are carried along.
    """

    grid: TimeGrid
    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    B1: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    Sigma1: np.ndarray
    Sigma2: np.ndarray
    F: np.ndarray
    X0: np.ndarray
    M: np.ndarray
    M_T: np.ndarray
    R_bar: np.ndarray
    r_bar: np.ndarray

    def at(self, j: int) -> dict[str, np.ndarray]:
        """All blocks at half-grid index j."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and v.shape[:1] == (2 * self.grid.N + 1,):
                out[f.name] = v[j]
        return out

    def frozen(self, j: int = 0) -> "BlockCoefficients":
        """Time-invariant copy using the values at half-grid index j."""
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and v.shape[:1] == (2 * self.grid.N + 1,):
                v = np.broadcast_to(v[j], v.shape).copy()
            kw[f.name] = v
        return BlockCoefficients(**kw)

    def is_time_invariant(self) -> bool:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and v.shape[:1] == (2 * self.grid.N + 1,):
                if not np.all(v == v[0]):
                    return False
        return True

    # derived products used by the leader equations
    @property
    def D1D1(self) -> np.ndarray:
        """D1 R_bar^-1 D1^T."""
        return np.einsum("ti,tj->tij", self.D1, self.D1) / self.R_bar[:, None, None]

    @property
    def D1D2(self) -> np.ndarray:
        """D1 R_bar^-1 D2^T."""
        return np.einsum("ti,tj->tij", self.D1, self.D2) / self.R_bar[:, None, None]

    @property
    def D2D2(self) -> np.ndarray:
        """D2 R_bar^-1 D2^T."""
        return np.einsum("ti,tj->tij", self.D2, self.D2) / self.R_bar[:, None, None]


def assemble_blocks(model: ModelSpec, Pi_half: np.ndarray, grid: TimeGrid) -> BlockCoefficients:
    """Build the augmented blocks from the model and the follower Riccati
    solution sampled on the half grid (length 2N+1)."""
    t = grid.half_nodes
    Pi_half = np.asarray(Pi_half, dtype=float)
    if Pi_half.shape != t.shape:
        raise ValueError(f"Pi must be sampled on the half grid ({t.shape}), got {Pi_half.shape}")
    A, B1, B2, alpha = model.A(t), model.B1(t), model.B2(t), model.alpha(t)
    R, r, l = model.R(t), model.r(t), model.l(t)
    n = t.shape
    b = -B1 ** 2 / R
    a = A + b * Pi_half

    B1blk = np.zeros(n + (2, 2))
    B1blk[:, 0, 1] = b
    B1blk[:, 1, 0] = b
    return BlockCoefficients(
        grid=grid,
        A1=_diag(A, a),
        A2=_diag(b * Pi_half, 0.0),
        A3=_diag(model.L_bar(t), 0.0),
        B1=B1blk,
        C1=_vec(-B1 * r / R + alpha, 0.0, n),
        C2=_vec(model.l_bar(t), -B1 * Pi_half * r / R + alpha * Pi_half + l, n),
        D1=_vec(B2, 0.0, n),
        D2=_vec(0.0, B2 * Pi_half, n),
        Sigma1=_vec(model.c(t), 0.0, n),
        Sigma2=_vec(model.c_bar(t), 0.0, n),
        F=_vec(model.f1(t), 0.0, n),
        X0=np.array([model.x0, 0.0]),
        M=np.broadcast_to(_diag(model.M_bar, 0.0), n + (2, 2)).copy(),
        M_T=np.array([model.m_bar, model.m]),
        R_bar=np.asarray(model.R_bar(t), dtype=float),
        r_bar=np.asarray(model.r_bar(t), dtype=float),
    )
