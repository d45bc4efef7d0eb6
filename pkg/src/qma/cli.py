"""Command line entry point: ``qma solve|verify|volume --config <path> [--out <dir>]``.

Exit codes: 0 success, 1 usage/config/IO error, 2 non-convergence,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, load_config
from .solver import NonpositiveDensityError, SolverConfig, achieved_density, density_to_f, solve
from .torus import FieldFormatError, GridSpec, PeriodicField, read_field, write_field
from . import verification as ver

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_VERIFY = 0, 1, 2, 3

CSV_COLUMNS = ["t", "newton_iters", "residual", "beta_sup", "eta_sup", "theta_sup",
               "positivity_margin", "mean_Pf"]


class _ContinuityLog:
    """Append-only CSV; each accepted state is flushed as soon as it exists."""

    def __init__(self, path: Path):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh)
        self._w.writerow(CSV_COLUMNS)
        self._fh.flush()

    def __call__(self, st):
        m = st.monitor
        self._w.writerow([
            repr(float(st.t)), st.newton_iters, f"{st.residual_norm:.6e}", f"{m['beta_sup']:.10e}",
            f"{m['eta_sup']:.10e}", f"{m['theta_sup']:.10e}", f"{st.positivity_margin:.10e}",
            f"{st.mean_pf:.15f}",
        ])
        self._fh.flush()

    def close(self):
        self._fh.close()


def _load_grid_field(path: Path, grid: GridSpec, what: str) -> PeriodicField:
    fld = read_field(path)
    if fld.grid != grid:
        raise ConfigError(f"{what} {path} has n={fld.grid.n}, N={fld.grid.N}; config asks for "
                          f"n={grid.n}, N={grid.N}")
    if not fld.real:
        raise ConfigError(f"{what} {path} must be real")
    return fld


def _solver_config(cfg) -> SolverConfig:
    try:
        return SolverConfig(cfg.grid, **cfg.solver_overrides())
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _run_solve(f: PeriodicField, cfg, out: Path, summary: list[str]):
    scfg = _solver_config(cfg)
    logger = _ContinuityLog(out / "continuity.csv")
    try:
        report = solve(f, scfg, on_state=logger)
    finally:
        logger.close()
    summary.append(f"converged = {str(report.converged).lower()}")
    summary.append(f"message = {report.message}")
    summary.append(f"continuity_states = {len(report.path)}")
    summary.append(f"final_residual = {report.final_residual:.6e}")
    summary.append(f"rhs_shift = {report.rhs_shift:.6e}")
    summary.append(f"rhs_rescaled = {str(report.rhs_rescaled).lower()}")
    summary.append("normalization = mean(phi) = 0; solution_sup_zero.qmaf has max(phi) = 0")
    if report.converged:
        write_field(out / "solution.qmaf", report.phi)
        write_field(out / "solution_sup_zero.qmaf", report.phi_sup_zero)
    return report


def _finish(summary: list[str], out: Path) -> None:
    text = "\n".join(summary) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_solve(cfg, out: Path) -> int:
    grid = cfg.grid
    summary = [f"command = solve", f"n = {grid.n}", f"points_per_axis = {grid.N}"]
    reference = None
    if cfg["manufactured_amplitude"] is not None:
        case = ver.make_case(grid.n, grid.N, cfg["manufactured_amplitude"])
        f, reference = case.f_star, case.phi_star
        write_field(out / "manufactured_phi.qmaf", case.phi_star)
        write_field(out / "manufactured_f.qmaf", case.f_star)
    elif cfg["f_file"] is not None:
        f = _load_grid_field(cfg.resolve(cfg["f_file"]), grid, "f_file")
    else:
        f = cfgmod.build_f(cfg)
    if cfg["reference_phi_file"] is not None:
        reference = _load_grid_field(cfg.resolve(cfg["reference_phi_file"]), grid, "reference_phi_file")
    report = _run_solve(f, cfg, out, summary)
    if report.converged and reference is not None:
        diff = report.phi.values - reference.values
        err = float(np.max(np.abs(diff - diff.mean())))
        summary.append(f"recovery_error = {err:.6e}")
    _finish(summary, out)
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


def cmd_volume(cfg, out: Path) -> int:
    grid = cfg.grid
    if cfg["sigma_file"] is not None:
        sigma = _load_grid_field(cfg.resolve(cfg["sigma_file"]), grid, "sigma_file")
    else:
        sigma = cfgmod.build_sigma(cfg)
    if np.min(sigma.values) <= 0:
        raise NonpositiveDensityError("target volume density must be positive everywhere")
    mean = sigma.mean()
    if abs(mean - 1.0) > 1e-12:
        raise ConfigError(f"target volume density must have mean 1 (got {mean:.15g})")
    summary = [f"command = volume", f"n = {grid.n}", f"points_per_axis = {grid.N}"]
    report = _run_solve(density_to_f(sigma), cfg, out, summary)
    if report.converged:
        got = achieved_density(report.phi, sigma)
        dev = float(np.max(np.abs(got.values - sigma.values)))
        write_field(out / "achieved_density.qmaf", got)
        summary.append(f"density_max_deviation = {dev:.6e}")
    _finish(summary, out)
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


def cmd_verify(cfg, out: Path) -> int:
    fault = None if cfg["fault_injection"] == "none" else cfg["fault_injection"]
    grid = cfg.grid
    seed = cfg["seed"]
    rows: list = []
    chosen = cfg["batteries"]
    if "det_pf" in chosen:
        rows += ver.det_pf_battery(cfg["det_sizes"], cfg["det_trials"], seed, fault=fault)
    if "pf_calculus" in chosen:
        rows += ver.pf_calculus_battery(cfg["calculus_trials"], seed=seed)
    if "identities" in chosen:
        rows += ver.run_identity_suite(grid.n, grid.N, cfg["trials"], seed, fault=fault)
    if "routes" in chosen:
        cases = ver.route_cases(seed, cfg["route_cases"], sizes=((grid.n, grid.N),))
        rows += ver.route_battery(cases, fault=fault)
    if "linearization" in chosen:
        rows += ver.linearization_battery(grid.n, grid.N, seed=seed)
    ver.write_results_csv(rows, out / "verification.csv")
    sys.stdout.write(ver.format_results(rows) + "\n")
    failed = [r.identity for r in rows if not r.passed]
    if failed:
        sys.stderr.write("verification failed: " + ", ".join(failed) + "\n")
        return EXIT_VERIFY
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "volume": cmd_volume}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qma", description="Quaternionic Monge-Ampère solver on flat tori")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="flat key = value configuration file")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.command)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, FieldFormatError, NonpositiveDensityError, ver.PositivityViolation) as exc:
        sys.stderr.write(f"qma: error: {exc}\n")
        return EXIT_CONFIG
    except OSError as exc:
        sys.stderr.write(f"qma: error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
