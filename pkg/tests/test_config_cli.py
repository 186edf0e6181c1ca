import csv
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stackelberg_lq.cli import run
from stackelberg_lq.config import RunConfig, load_config, parse_config
from stackelberg_lq.errors import ConfigError
from stackelberg_lq.model import ADVERTISING_DEFAULTS, CoefficientFn

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _error(text):
    with pytest.raises(ConfigError) as e:
        parse_config(text, "x.cfg")
    return e.value


def test_parse_general_model_with_table():
    cfg = parse_config("[model]\nA = -0.5\nB1 = [(0, 1.0), (1, 2.0)]\n[cost_leader]\nL = 0.3\n"
                       "[grid]\nT = 2\nN = 40\n")
    m = cfg.build_model()
    assert m.A.constant == -0.5
    assert m.B1(0.5) == pytest.approx(1.5)
    assert m.L_bar.constant == 0.3 and m.L.constant == 0.0
    assert cfg.grid().T == 2.0 and cfg.grid().N == 40


def test_error_positions():
    e = _error("[grid]\nT = 1\nN = abc\n")
    assert (e.line, e.column) == (3, 5)
    assert str(e).startswith("x.cfg:3:5:")
    assert _error("[grid]\n  foo = 1\n").line == 2
    assert _error("[nope]\n").line == 1
    assert _error("[grid]\nN = 1\nN = 2\n").line == 3
    assert _error("T = 1\n").line == 1
    assert _error("[grid]\nN = 2.5\n").column == 5


def test_rejects_mixed_and_incomplete_advertising():
    text = "[advertising]\n" + "".join(f"{k} = {v}\n" for k, v in ADVERTISING_DEFAULTS.items())
    parse_config(text)
    _error(text + "[model]\nA = 1\n")
    _error("[advertising]\nbeta1 = 0.2\n")


def test_rejects_non_finite_and_bad_tables():
    _error("[model]\nA = inf\n")
    _error("[model]\nA = [(0, 1), (0, 2)]\n")
    _error("[montecarlo]\nantithetic = maybe\n")
    _error("[sweep]\nparameter = 3x\n")


def test_load_config_reports_invalid_values(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("[grid]\nN = 0\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_shipped_configs_load():
    for p in CONFIGS.glob("*.cfg"):
        load_config(p)


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(A=finite, R=st.floats(0.1, 10), N=st.integers(1, 5000), seed=st.integers(0, 2 ** 64 - 1),
       anti=st.booleans(), vals=st.lists(finite, min_size=1, max_size=5),
       tab=st.lists(finite, min_size=2, max_size=4))
def test_round_trip(A, R, N, seed, anti, vals, tab):
    table = [(float(i), v) for i, v in enumerate(tab)]
    cfg = RunConfig(model={"A": CoefficientFn(A), "c": CoefficientFn(table=table)},
                    cost_follower={"R": CoefficientFn(R), "M": 0.5}, N=N, seed=seed,
                    antithetic=anti, sweep_parameter="beta2", sweep_values=vals, checkpoints=[0.5, 1.0])
    assert parse_config(cfg.to_text()) == cfg


def test_round_trip_advertising():
    cfg = load_config(CONFIGS / "advertising.cfg")
    assert parse_config(cfg.to_text()) == cfg


def _read(path):
    with open(path) as f:
        rows = list(csv.reader(f))
    return rows[0], np.array(rows[1:], dtype=float)


def test_cli_offline_zero_costs(tmp_path):
    assert run(["offline", "--config", str(CONFIGS / "zero.cfg"), "--out", str(tmp_path)]) == 0
    header, data = _read(tmp_path / "gains.csv")
    assert header[0] == "t" and data.shape == (101, len(header))
    assert np.all(data[:, 1:] == 0)
    assert "-0" not in (tmp_path / "gains.csv").read_text().split()[1]


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[grid]\nN = abc\n")
    assert run(["offline", "--config", str(bad), "--out", str(tmp_path)]) == 1
    r0 = tmp_path / "r0.cfg"
    r0.write_text("[model]\nB1 = 1\n[cost_follower]\nR = 0\n")
    assert run(["offline", "--config", str(r0), "--out", str(tmp_path)]) == 2
    assert run(["special-case", "--config", str(CONFIGS / "advertising.cfg"),
                "--out", str(tmp_path)]) == 2
    assert run(["sweep", "--config", str(CONFIGS / "zero.cfg"), "--out", str(tmp_path)]) == 1
    assert run(["nonsense"]) == 1
    blow = tmp_path / "blow.cfg"
    blow.write_text("[model]\nB1 = 1\n[cost_follower]\nR = -0.01\nM = 5\n")
    assert run(["offline", "--config", str(blow), "--out", str(tmp_path)]) == 3


def test_cli_special_case(tmp_path):
    assert run(["special-case", "--config", str(CONFIGS / "special_case.cfg"),
                "--out", str(tmp_path)]) == 0
    text = (tmp_path / "special_case_gaps.csv").read_text()
    assert "false" not in text


def test_cli_simulate_outputs_and_overrides(tmp_path):
    args = ["simulate", "--config", str(CONFIGS / "advertising.cfg"), "--paths", "300",
            "--steps", "50", "--seed", "5", "--checkpoints", "0.5", "--out", str(tmp_path)]
    assert run(args) == 0
    for name in ("ensemble_mean", "checkpoints", "costs", "diagnostics", "sample_paths", "gains", "Pi1"):
        assert (tmp_path / f"{name}.csv").exists(), name
    _, cps = _read(tmp_path / "checkpoints.csv")
    assert np.allclose(cps[:, 0], [0.5, 1.0])
    _, mean = _read(tmp_path / "ensemble_mean.csv")
    assert mean.shape[0] == 51


def test_cli_sweep(tmp_path):
    args = ["sweep", "--config", str(CONFIGS / "advertising.cfg"), "--paths", "200", "--steps", "20",
            "--parameter", "mu1", "--values", "0.3,0.6", "--out", str(tmp_path)]
    assert run(args) == 0
    assert (tmp_path / "sweep_mu1_0.csv").exists() and (tmp_path / "sweep_mu1_1.csv").exists()
    header, _ = _read(tmp_path / "sweep_mu1_0.csv")
    assert "mean_v1" in header and "se_v2" in header
