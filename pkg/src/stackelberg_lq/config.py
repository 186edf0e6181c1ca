"""Run configuration files.

Grammar (one item per line, '#' or ';' starts a comment line):

    [section]
    key = value

value is a number, true/false, a bare word (parameter names), a list of
numbers `[0.1, 0.2]`, or a coefficient table `[(t0, v0), (t1, v1), ...]`.
Sections and keys are fixed (see SCHEMA); anything else is rejected with its
line and column.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, InvalidParameter, StackelbergError
from .model import ADVERTISING_KEYS, CoefficientFn, ModelSpec, TimeGrid, from_advertising
from .montecarlo import NoiseSpec

COEF, FLOAT, INT, BOOL, FLOATS, WORD = "coef", "float", "int", "bool", "floats", "word"

# [cost_leader] uses the follower's key names; they map to the barred fields
SCHEMA: dict[str, dict[str, str]] = {
    "model": {k: COEF for k in ("A", "B1", "B2", "alpha", "c", "c_bar", "f1", "f2", "g")} | {"x0": FLOAT},
    "cost_follower": {"L": COEF, "R": COEF, "l": COEF, "r": COEF, "M": FLOAT, "m": FLOAT},
    "cost_leader": {"L": COEF, "R": COEF, "l": COEF, "r": COEF, "M": FLOAT, "m": FLOAT},
    "advertising": {k: FLOAT for k in ADVERTISING_KEYS},
    "grid": {"T": FLOAT, "N": INT},
    "montecarlo": {"seed": INT, "paths": INT, "antithetic": BOOL, "sample_paths": INT,
                   "checkpoints": FLOATS},
    "sweep": {"parameter": WORD, "values": FLOATS},
    "verify": {"perturbation_paths": INT, "frozen_v2": FLOAT},
}

_GENERAL = ("model", "cost_follower", "cost_leader")


@dataclass
class RunConfig:
    model: dict[str, object] = field(default_factory=dict)
    cost_follower: dict[str, object] = field(default_factory=dict)
    cost_leader: dict[str, object] = field(default_factory=dict)
    advertising: dict[str, float] | None = None
    T: float = 1.0
    N: int = 200
    seed: int = 0
    paths: int = 10000
    antithetic: bool = False
    sample_paths: int = 8
    checkpoints: list[float] | None = None
    sweep_parameter: str | None = None
    sweep_values: list[float] | None = None
    perturbation_paths: int = 20000
    frozen_v2: float = 0.1

    def build_model(self) -> ModelSpec:
        if self.advertising is not None:
            return from_advertising(self.advertising)
        kw = dict(self.model)
        kw.update(self.cost_follower)
        kw.update({k + "_bar": v for k, v in self.cost_leader.items()})
        return ModelSpec(**kw)

    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.N)

    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.seed, self.paths, self.antithetic)

    def to_text(self) -> str:
        """Serialize; parse_config(cfg.to_text()) == cfg."""
        lines = []

        def section(name, items):
            lines.append(f"[{name}]")
            for k, v in items:
                lines.append(f"{k} = {_format(v)}")
            lines.append("")

        if self.advertising is not None:
            section("advertising", self.advertising.items())
        else:
            for s in _GENERAL:
                items = getattr(self, s)
                if items:
                    section(s, items.items())
        section("grid", [("T", self.T), ("N", self.N)])
        mc = [("seed", self.seed), ("paths", self.paths), ("antithetic", self.antithetic),
              ("sample_paths", self.sample_paths)]
        if self.checkpoints is not None:
            mc.append(("checkpoints", self.checkpoints))
        section("montecarlo", mc)
        if self.sweep_parameter is not None or self.sweep_values is not None:
            sw = []
            if self.sweep_parameter is not None:
                sw.append(("parameter", self.sweep_parameter))
            if self.sweep_values is not None:
                sw.append(("values", self.sweep_values))
            section("sweep", sw)
        section("verify", [("perturbation_paths", self.perturbation_paths),
                           ("frozen_v2", self.frozen_v2)])
        return "\n".join(lines)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, CoefficientFn):
        if v.is_constant:
            return repr(v.constant)
        return "[" + ", ".join(f"({a!r}, {b!r})" for a, b in v.table) + "]"
    if isinstance(v, (list, tuple)):
        if v and isinstance(v[0], (list, tuple)):
            return "[" + ", ".join(f"({float(a)!r}, {float(b)!r})" for a, b in v) + "]"
        return "[" + ", ".join(repr(float(x)) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(kind: str, raw: str, line: int, col: int, path: str | None):
    def fail(msg):
        raise ConfigError(msg, line, col, path)

    if kind == WORD:
        if not raw.isidentifier():
            fail(f"expected a name, got {raw!r}")
        return raw
    if kind == BOOL:
        low = raw.lower()
        if low not in ("true", "false"):
            fail(f"expected true or false, got {raw!r}")
        return low == "true"
    try:
        val = ast.literal_eval(raw)
    except (ValueError, SyntaxError) as e:
        fail(f"cannot parse value {raw!r} ({e.__class__.__name__})")
    if kind == INT:
        if isinstance(val, bool) or not isinstance(val, int):
            fail(f"expected an integer, got {raw!r}")
        return val
    if kind == FLOAT:
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
            fail(f"expected a finite number, got {raw!r}")
        return float(val)
    if kind == FLOATS:
        if not isinstance(val, (list, tuple)) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
            fail(f"expected a list of numbers, got {raw!r}")
        return [float(x) for x in val]
    # coefficient: number or table of pairs
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return CoefficientFn(float(val))
    if isinstance(val, (list, tuple)):
        try:
            return CoefficientFn(table=[(float(a), float(b)) for a, b in val])
        except (TypeError, ValueError, InvalidParameter) as e:
            fail(f"bad coefficient table: {e}")
    fail(f"expected a number or a table [(t, value), ...], got {raw!r}")


def parse_config(text: str, path: str | None = None) -> RunConfig:
    cfg = RunConfig()
    seen: dict[str, dict[str, int]] = {}
    headers: dict[str, int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        indent = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", lineno, indent, path)
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, indent + 1, path)
            if section in seen:
                raise ConfigError(f"duplicate section [{section}]", lineno, indent + 1, path)
            seen[section] = {}
            headers[section] = lineno
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", lineno, indent, path)
        if section is None:
            raise ConfigError("key outside of any section", lineno, indent, path)
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, indent, path)
        if key in seen[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno, indent, path)
        seen[section][key] = lineno
        eq = line.index("=")
        rest = line[eq + 1:]
        col = eq + 2 + len(rest) - len(rest.lstrip())
        if not raw:
            raise ConfigError(f"missing value for {key!r}", lineno, col, path)
        val = _parse_value(SCHEMA[section][key], raw, lineno, col, path)
        _assign(cfg, section, key, val)

    clash = [s for s in _GENERAL if s in headers]
    if "advertising" in headers and clash:
        line = max(headers["advertising"], *(headers[s] for s in clash))
        raise ConfigError("[advertising] cannot be combined with [model]/[cost_*] sections", line, 1, path)
    if "advertising" in seen:
        missing = [k for k in ADVERTISING_KEYS if k not in cfg.advertising]
        if missing:
            raise ConfigError(f"[advertising] is missing keys: {missing}", headers["advertising"], 1, path)
    return cfg


def _assign(cfg: RunConfig, section: str, key: str, val):
    if section in _GENERAL:
        getattr(cfg, section)[key] = val
    elif section == "advertising":
        if cfg.advertising is None:
            cfg.advertising = {}
        cfg.advertising[key] = val
    elif section == "grid":
        setattr(cfg, key, val)
    elif section == "montecarlo":
        setattr(cfg, key, val)
    elif section == "sweep":
        setattr(cfg, "sweep_" + key, val)
    elif section == "verify":
        setattr(cfg, key, val)


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", path=str(p))
    cfg = parse_config(text, str(p))
    try:
        cfg.build_model()
        cfg.grid()
        cfg.noise()
    except StackelbergError as e:
        if isinstance(e, InvalidParameter):
            raise ConfigError(str(e), path=str(p))
        raise
    except TypeError as e:
        raise ConfigError(str(e), path=str(p))
    return cfg
