"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 hard assumption violation,
3 numerical blow-up or divergence, 4 failed verification.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import csvio
from .config import RunConfig, load_config
from .errors import ConfigError, StackelbergError, VerificationFailed
from .feedback import OfflineSolution, solve_offline
from .model import validate
from .riccati import check_uniqueness_conditions
from .scenarios import (SWEEP_SERIES, compare_special_case, parameter_sweep, run_model,
                        special_case_solution)
from .verification import run_verification

log = logging.getLogger("stackelberg_lq")


def _parse_checkpoints(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"checkpoints must be comma-separated numbers, got {s!r}")


def _u64(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stackelberg-lq", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration file")
    common.add_argument("--out", default="out", help="output directory for CSV files")
    common.add_argument("--seed", type=_u64, help="override [montecarlo] seed")
    common.add_argument("--paths", type=int, help="override [montecarlo] paths")
    common.add_argument("--steps", type=int, help="override [grid] N")
    common.add_argument("--checkpoints", type=_parse_checkpoints,
                        help="comma-separated checkpoint times, e.g. 0.2,0.4,1.0")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("offline", parents=[common], help="solve the deterministic equations")
    sub.add_parser("simulate", parents=[common], help="closed-loop Monte Carlo and diagnostics")
    sub.add_parser("verify", parents=[common], help="run the full invariant suite")
    sub.add_parser("special-case", parents=[common], help="compare against the reduced special case")
    sp = sub.add_parser("sweep", parents=[common], help="re-run over values of one parameter")
    sp.add_argument("--parameter", help="override [sweep] parameter")
    sp.add_argument("--values", type=_parse_checkpoints, help="override [sweep] values")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.paths is not None:
        cfg.paths = args.paths
    if args.steps is not None:
        cfg.N = args.steps
    if args.checkpoints is not None:
        cfg.checkpoints = args.checkpoints
    if getattr(args, "parameter", None):
        cfg.sweep_parameter = args.parameter
    if getattr(args, "values", None):
        cfg.sweep_values = args.values
    return cfg


def write_offline(off: OfflineSolution, out: Path):
    t = off.grid.nodes
    for name in ("Pi", "P", "Pi1", "Pi2", "Pi3", "cov", "Phi", "Phi_check"):
        csvio.write_series(out / f"{name}.csv", t, {name: getattr(off, name).values})
    g = off.gains
    csvio.write_series(out / "gains.csv", t, {"G2": g.G2, "b2": g.b2, "G1_hat": g.G1_hat,
                                              "G1_check": g.G1_check, "b1": g.b1})
    uq = check_uniqueness_conditions(off.blocks, off.Pi1, off.Pi2, off.Pi3, off.grid)
    csvio.write_series(out / "uniqueness.csv", t, {f"min_eig_{k}": v for k, v in uq.min_eig.items()})


def cmd_offline(cfg: RunConfig, out: Path) -> int:
    model, grid = cfg.build_model(), cfg.grid()
    diag = validate(model, grid)
    for w in diag.warnings:
        log.warning("assumption warning: %s", w)
    off = solve_offline(model, grid)
    write_offline(off, out)
    log.info("wrote offline trajectories to %s", out)
    return 0


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    model, grid = cfg.build_model(), cfg.grid()
    run = run_model(model, grid, cfg.noise(), sample_paths=cfg.sample_paths,
                    checkpoints=cfg.checkpoints)
    for w in run.diagnostics.warnings:
        log.warning("assumption warning: %s", w)
    ens = run.ensemble
    t = grid.nodes
    M = ens.J1.size
    means = {f"mean_{k}": v for k, v in ens.mean.items()}
    means.update({f"se_{k}": np.sqrt(ens.var[k] / M) for k in ("v1", "v2")})
    csvio.write_series(out / "ensemble_mean.csv", t, means)
    fs = run.filter_stats
    csvio.write_series(out / "checkpoints.csv", fs.times, fs.rows)
    c = run.costs
    csvio.write_rows(out / "costs.csv", ["quantity", "mean", "se", "paths"],
                     [("J1", c.J1, c.J1_se, c.paths), ("J2", c.J2, c.J2_se, c.paths)])
    diag_rows = [("innovation_mean_T", fs.innovation_mean), ("innovation_var_T", fs.innovation_var),
                 ("innovation_mean_bound", fs.innovation_mean_bound)]
    diag_rows += [(k, float(v)) for k, v in ens.checks.items()]
    csvio.write_rows(out / "diagnostics.csv", ["quantity", "value"], diag_rows)
    rows = []
    names = list(ens.sample)
    n_keep = ens.sample[names[0]].shape[0]
    for p in range(n_keep):
        for k in range(grid.N + 1):
            rows.append([p, float(t[k])] + [float(ens.sample[n][p, k]) for n in names])
    csvio.write_rows(out / "sample_paths.csv", ["path", "t"] + names, rows)
    write_offline(run.offline, out)
    log.info("J1 = %.6g +/- %.2g, J2 = %.6g +/- %.2g (%d paths)", c.J1, c.J1_se, c.J2, c.J2_se, c.paths)
    return 0


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    model, grid = cfg.build_model(), cfg.grid()
    checks = run_verification(model, grid, cfg.noise(), cfg.perturbation_paths, cfg.frozen_v2,
                              cfg.checkpoints)
    csvio.write_rows(out / "verify.csv", ["check", "value", "threshold", "passed", "advisory", "note"],
                     [(c.name, c.value, float(c.threshold), c.passed, c.advisory, c.note) for c in checks])
    failed = [c for c in checks if not c.passed and not c.advisory]
    for c in checks:
        status = "PASS" if c.passed else ("ADVISORY" if c.advisory else "FAIL")
        log.info("%-8s %-36s value=%.6g threshold=%.3g %s", status, c.name, c.value, c.threshold, c.note)
    if failed:
        raise VerificationFailed("failed checks: " + ", ".join(c.name for c in failed))
    return 0


def cmd_special_case(cfg: RunConfig, out: Path) -> int:
    model, grid = cfg.build_model(), cfg.grid()
    sc = special_case_solution(model, grid)
    off = solve_offline(model, grid)
    gaps = compare_special_case(sc, off)
    t = grid.nodes
    csvio.write_series(out / "special_case.csv", t, {
        "theta_hat": sc.theta_hat.values, "Pi1_bar": sc.Pi1_bar.values, "Pi2_bar": sc.Pi2_bar.values,
        "Phi_hat": sc.Phi_hat.values, "G2": sc.gains.G2, "b2": sc.gains.b2, "b1": sc.gains.b1})
    csvio.write_rows(out / "special_case_gaps.csv", ["quantity", "max_abs_gap", "passed"],
                     [(k, v, v <= 1e-6) for k, v in gaps.items()])
    bad = {k: v for k, v in gaps.items() if v > 1e-6}
    for k, v in gaps.items():
        log.info("%-20s %.3g", k, v)
    if bad:
        raise VerificationFailed(f"special case disagrees with the general solution: {bad}")
    return 0


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    if cfg.advertising is None:
        raise ConfigError("sweep needs an [advertising] section")
    if not cfg.sweep_parameter or not cfg.sweep_values:
        raise ConfigError("sweep needs [sweep] parameter and values (or --parameter/--values)")
    grid = cfg.grid()
    res = parameter_sweep(cfg.advertising, cfg.sweep_parameter, cfg.sweep_values, grid, cfg.noise())
    t = grid.nodes
    rows = []
    for i, v in enumerate(res.values):
        csvio.write_series(out / f"sweep_{res.name}_{i}.csv", t,
                           {f"mean_{s}": res.mean[s][i] for s in SWEEP_SERIES}
                           | {f"se_{s}": res.se[s][i] for s in SWEEP_SERIES})
        for s in SWEEP_SERIES:
            for k in range(grid.N + 1):
                rows.append((v, float(t[k]), s, float(res.mean[s][i, k])))
    csvio.write_rows(out / f"sweep_{res.name}_long.csv", ["param_value", "t", "series", "value"], rows)
    return 0


COMMANDS = {"offline": cmd_offline, "simulate": cmd_simulate, "verify": cmd_verify,
            "special-case": cmd_special_case, "sweep": cmd_sweep}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        cfg.grid()
        cfg.noise()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except StackelbergError as e:
        log.error("%s: %s", e.__class__.__name__, e)
        return e.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
