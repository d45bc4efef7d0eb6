"""Continuity-method solver for ``Pf(Omega_phi) = e^f`` on the flat torus.

The path ``Pf(Omega_phi_t) = t e^f + (1 - t)`` is followed from ``t = 0``
(where ``phi = 0``) to ``t = 1``.  At each ``t`` a damped Newton iteration is
run on the band-projected residual

    F(phi) = P_B (Pf(Omega_phi) - target),

where ``P_B`` removes every Fourier mode with a Nyquist component; unknowns are
mean-zero fields in the same band, which makes the discrete system square.
The Newton correction solves ``DF(phi) psi = -F`` with GMRES, left
preconditioned by the inverse of ``Laplacian / 4``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse.linalg as spla

from .hkt import EstimateMonitor, Linearization, assemble_omega_phi, positivity_check
from .torus import GridSpec, PeriodicField, _fftn, _ifftn

log = logging.getLogger(__name__)

MEAN_DEFECT_TOL = 1e-9
RHS_MEAN_TOL = 1e-12


class SolverError(RuntimeError):
    pass


class LineSearchExhausted(SolverError):
    """No damped step kept positivity and decreased the residual."""


class KrylovNotConverged(SolverError):
    """The linear solve missed its tolerance by a wide margin."""


class NonpositiveDensityError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and step controls for :func:`solve`.

    ``newton_tol`` bounds the max norm of the band-projected residual
    ``Pf(Omega_phi) - target``.  The GMRES relative tolerance at each Newton
    step is ``max(krylov_tol, min(forcing_cap, |F|))``.
    """

    grid: GridSpec
    newton_tol: float = 1e-10
    max_newton: int = 30
    t_step_init: float = 0.25
    t_step_min: float = 1e-3
    damping: float = 0.5
    krylov_tol: float = 1e-12
    krylov_max_iter: int = 500
    krylov_restart: int = 60
    positivity_margin: float = 1e-8
    max_backtracks: int = 20
    forcing_cap: float = 1e-2
    krylov_accept: float = 1e-6
    fast_newton: int = 3

    def __post_init__(self):
        for name in ("newton_tol", "krylov_tol", "positivity_margin", "t_step_min", "t_step_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.t_step_min <= self.t_step_init <= 1.0:
            raise ValueError("need t_step_min <= t_step_init <= 1")
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping must lie in (0, 1)")
        if self.max_newton < 1 or self.krylov_max_iter < 1 or self.krylov_restart < 1:
            raise ValueError("iteration limits must be >= 1")


@dataclass
class ContinuityState:
    t: float
    phi: PeriodicField
    residual_norm: float
    newton_iters: int
    positivity_margin: float
    mean_pf: float
    monitor: dict
    residual_history: list = dc_field(default_factory=list)
    log_residual: float = float("nan")


@dataclass
class SolveReport:
    converged: bool
    path: list
    final_residual: float
    newton_iterations: list
    phi: PeriodicField | None
    phi_sup_zero: PeriodicField | None
    rhs_shift: float = 0.0
    rhs_rescaled: bool = False
    message: str = ""
    failed_attempts: list = dc_field(default_factory=list)

    @property
    def normalization(self) -> str:
        return "mean(phi) = 0 (phi_sup_zero: max(phi) = 0)"


# ---------------------------------------------------------------------------
# right-hand side
# ---------------------------------------------------------------------------


def normalize_rhs(f: PeriodicField) -> tuple[PeriodicField, float]:
    """``(e^(f + c), c)`` with ``c = -log mean(e^f)`` so the result has mean 1."""
    if not f.real:
        raise ValueError("f must be real")
    ef = np.exp(f.values)
    c = -math.log(float(ef.mean()))
    return PeriodicField(f.grid, ef * math.exp(c)), c


def build_rhs(f: PeriodicField) -> PeriodicField:
    return normalize_rhs(f)[0]


def continuity_rhs(rhs: PeriodicField, t: float) -> PeriodicField:
    """``t * rhs + (1 - t)``."""
    if t == 0.0:
        return PeriodicField.constant(rhs.grid, 1.0)
    if t == 1.0:
        return rhs
    return PeriodicField(rhs.grid, t * rhs.values + (1.0 - t))


# ---------------------------------------------------------------------------
# Newton machinery
# ---------------------------------------------------------------------------


def _band_mean_zero(grid: GridSpec) -> np.ndarray:
    m = np.array(grid.band_mask(), dtype=float)
    m = np.broadcast_to(m, grid.shape).copy()
    m.flat[0] = 0.0
    return m


def _project(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return _ifftn(_fftn(values) * mask).real


def _projected_residual(pf: np.ndarray, target: np.ndarray, mask: np.ndarray):
    """Band projection of ``pf - target`` and the discarded mean."""
    h = _fftn(pf - target)
    mean = float(h.flat[0].real)
    return _ifftn(h * mask).real, mean


@dataclass
class _Eval:
    phi: PeriodicField
    omega: object
    residual: np.ndarray
    norm: float
    margin: float
    discarded_mean: float


def _evaluate(phi: PeriodicField, target: np.ndarray, mask: np.ndarray) -> _Eval:
    omega = assemble_omega_phi(phi)
    pf = omega.pfaffian().values
    res, mean = _projected_residual(pf, target, mask)
    margin = positivity_check(omega).margin
    return _Eval(phi, omega, res, float(np.max(np.abs(res))), margin, mean)


def _preconditioner(grid: GridSpec, mask: np.ndarray) -> np.ndarray:
    sym = grid.quarter_laplacian_symbol()
    with np.errstate(divide="ignore"):
        inv = np.where(mask > 0, 1.0 / np.where(sym == 0, 1.0, sym), 0.0)
    return inv


def _newton_direction(ev: _Eval, cfg: SolverConfig, mask: np.ndarray, pinv: np.ndarray):
    grid = ev.phi.grid
    lin = Linearization(ev.omega)
    scaled = lin.weights * lin.pf
    syms = [s for s, _ in lin._syms]
    shape = grid.shape

    def precond_op(vec):
        h = _fftn(vec.reshape(shape)) * mask
        acc = np.zeros(shape, dtype=complex)
        for k, sym in enumerate(syms):
            if np.any(sym):
                acc += scaled[k] * _ifftn(sym * h)
        return _ifftn(_fftn(acc.real) * pinv).real.ravel()

    b = -_ifftn(_fftn(ev.residual) * pinv).real.ravel()
    op = spla.LinearOperator((grid.size, grid.size), matvec=precond_op, dtype=float)
    rtol = max(cfg.krylov_tol, min(cfg.forcing_cap, ev.norm))
    restart = min(cfg.krylov_restart, cfg.krylov_max_iter)
    counter = {"it": 0}

    def cb(_):
        counter["it"] += 1

    x, info = spla.gmres(
        op, b, rtol=rtol, atol=0.0, restart=restart,
        maxiter=max(1, math.ceil(cfg.krylov_max_iter / restart)),
        callback=cb, callback_type="pr_norm",
    )
    bn = float(np.linalg.norm(b))
    true_rel = float(np.linalg.norm(precond_op(x) - b)) / bn if bn > 0 else 0.0
    if info != 0 and true_rel > cfg.krylov_accept:
        raise KrylovNotConverged(
            f"GMRES stopped with relative residual {true_rel:.3e} after {counter['it']} iterations"
        )
    psi = PeriodicField(grid, _project(x.reshape(shape), mask))
    return psi, {"krylov_iters": counter["it"], "krylov_rel_residual": true_rel, "krylov_rtol": rtol}


def newton_step(phi: PeriodicField, target: PeriodicField, cfg: SolverConfig | None = None):
    """One damped Newton step; returns ``(new_phi, diagnostics)``.

    Raises :class:`LineSearchExhausted` when no step length in
    ``1, d, d^2, ...`` keeps the positivity margin and lowers the residual.
    """
    cfg = cfg or SolverConfig(phi.grid)
    mask = _band_mean_zero(phi.grid)
    pinv = _preconditioner(phi.grid, mask)
    ev = _evaluate(phi, target.values, mask)
    new, diag = _damped_step(ev, target.values, cfg, mask, pinv)
    return new.phi, diag


def _damped_step(ev: _Eval, target: np.ndarray, cfg: SolverConfig, mask, pinv):
    if abs(ev.discarded_mean) > MEAN_DEFECT_TOL:
        raise SolverError(f"residual mean {ev.discarded_mean:.3e} exceeds {MEAN_DEFECT_TOL}")
    psi, diag = _newton_direction(ev, cfg, mask, pinv)
    s = 1.0
    for attempt in range(cfg.max_backtracks + 1):
        cand = _evaluate(ev.phi + psi * s, target, mask)
        if cand.margin >= cfg.positivity_margin and cand.norm < ev.norm:
            diag.update(step=s, backtracks=attempt, residual_before=ev.norm,
                        residual_after=cand.norm, discarded_mean=ev.discarded_mean)
            return cand, diag
        s *= cfg.damping
    raise LineSearchExhausted(f"no acceptable step after {cfg.max_backtracks} backtracks")


def _newton_solve(ev: _Eval, target: np.ndarray, cfg: SolverConfig, mask, pinv):
    history = [ev.norm]
    iters = 0
    while ev.norm > cfg.newton_tol:
        if iters >= cfg.max_newton:
            raise SolverError(f"no convergence in {cfg.max_newton} Newton iterations")
        ev, diag = _damped_step(ev, target, cfg, mask, pinv)
        log.debug("newton %d: %s", iters, diag)
        history.append(ev.norm)
        iters += 1
    return ev, iters, history


# ---------------------------------------------------------------------------
# continuity path
# ---------------------------------------------------------------------------


def _log_residual(ev: _Eval, target: np.ndarray) -> float:
    pf = ev.omega.pfaffian().values
    return float(np.max(np.abs(np.log(target) - np.log(pf))))


def _state(t, ev, iters, hist, target, monitor) -> ContinuityState:
    snap = monitor.record(ev.phi, t)
    return ContinuityState(
        t=t, phi=ev.phi, residual_norm=ev.norm, newton_iters=iters,
        positivity_margin=ev.margin, mean_pf=ev.omega.pfaffian().mean(),
        monitor=snap, residual_history=hist, log_residual=_log_residual(ev, target),
    )


def solve(f: PeriodicField, cfg: SolverConfig, phi0: PeriodicField | None = None,
          on_state=None) -> SolveReport:
    """March ``t`` from 0 to 1 and return the full trajectory.

    ``f`` is rescaled (and the shift recorded) when ``mean(e^f)`` differs from
    1.  ``phi0`` is an optional initial guess (projected to the mean-zero
    band); ``on_state`` is called with every accepted :class:`ContinuityState`.
    """
    grid = cfg.grid
    if f.grid != grid:
        raise ValueError("f and config use different grids")
    rhs, shift = normalize_rhs(f)
    rescaled = abs(shift) > RHS_MEAN_TOL
    if rescaled:
        log.warning("mean(e^f) != 1; f shifted by %.6e to restore the normalization", shift)
    mask = _band_mean_zero(grid)
    pinv = _preconditioner(grid, mask)
    monitor = EstimateMonitor()

    if phi0 is None:
        phi = PeriodicField(grid, np.zeros(grid.shape))
    else:
        phi = PeriodicField(grid, _project(phi0.values, mask))

    path: list[ContinuityState] = []
    failed: list = []

    def accept(state):
        path.append(state)
        if on_state is not None:
            on_state(state)

    def finish(ok: bool, msg: str) -> SolveReport:
        last = path[-1] if path else None
        sol = last.phi if (ok and last) else None
        supz = PeriodicField(grid, sol.values - sol.values.max()) if sol is not None else None
        return SolveReport(
            converged=ok, path=path, final_residual=last.residual_norm if last else float("inf"),
            newton_iterations=[s.newton_iters for s in path], phi=sol, phi_sup_zero=supz,
            rhs_shift=shift, rhs_rescaled=rescaled, message=msg, failed_attempts=failed,
        )

    # already solved at t = 1 (e.g. f constant): the path is the single state t = 1
    ev1 = _evaluate(phi, rhs.values, mask)
    if ev1.norm <= cfg.newton_tol and ev1.margin >= cfg.positivity_margin:
        accept(_state(1.0, ev1, 0, [ev1.norm], rhs.values, monitor))
        return finish(True, "initial guess solves the equation")

    t = 0.0
    step = cfg.t_step_init
    current = phi
    while t < 1.0:
        t_new = min(1.0, t + step)
        target = continuity_rhs(rhs, t_new).values
        try:
            ev = _evaluate(current, target, mask)
            if ev.margin < cfg.positivity_margin:
                raise SolverError("initial guess is not positive")
            ev, iters, hist = _newton_solve(ev, target, cfg, mask, pinv)
        except SolverError as exc:
            failed.append((t_new, str(exc)))
            log.info("t = %.6f failed: %s", t_new, exc)
            step *= 0.5
            if step < cfg.t_step_min:
                return finish(False, f"continuity step fell below {cfg.t_step_min} at t = {t:.6f}: {exc}")
            continue
        accept(_state(t_new, ev, iters, hist, target, monitor))
        t = t_new
        current = ev.phi
        if iters <= cfg.fast_newton:
            step = min(2.0 * step, 1.0)
        step = min(step, 1.0 - t) if t < 1.0 else step
    return finish(True, "converged")


# ---------------------------------------------------------------------------
# volume prescription
# ---------------------------------------------------------------------------


def density_to_f(sigma: PeriodicField) -> PeriodicField:
    """``f = log(sqrt(sigma)) + c`` with ``c`` making ``mean(e^f) = 1``."""
    if not sigma.real or np.min(sigma.values) <= 0:
        raise NonpositiveDensityError("target volume density must be positive")
    root = np.sqrt(sigma.values)
    return PeriodicField(sigma.grid, np.log(root / root.mean()))


def achieved_density(phi: PeriodicField, sigma: PeriodicField) -> PeriodicField:
    """Volume density of ``a * Omega_phi``, ``a^n = mean(sqrt(sigma))``.

    ``Omega_phi^n ^ conj(Omega_phi)^n = Pf^2 Omega^n ^ conj(Omega)^n``, so the
    density relative to the flat volume is ``a^(2n) Pf^2``.
    """
    scale = float(np.sqrt(sigma.values).mean()) ** 2
    pf = assemble_omega_phi(phi).pfaffian().values
    return PeriodicField(phi.grid, scale * pf**2)


def solve_volume(sigma: PeriodicField, cfg: SolverConfig):
    """Solve for the prescribed volume density; returns ``(report, achieved, deviation)``."""
    f = density_to_f(sigma)
    report = solve(f, cfg)
    if not report.converged:
        return report, None, float("inf")
    got = achieved_density(report.phi, sigma)
    return report, got, float(np.max(np.abs(got.values - sigma.values)))
