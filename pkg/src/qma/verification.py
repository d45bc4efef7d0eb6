"""Manufactured solutions and the identity / consistency batteries.

Every battery returns a list of :class:`CheckResult` rows (identity name,
worst violation, fixed threshold, pass flag) that can be written as CSV.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .forms import EXACT_SIZE_LIMIT, FormField, random_form
from .hkt import (
    HktFormField,
    Linearization,
    assemble_omega_phi,
    positivity_check,
    qma_moore_route,
    qma_pfaffian_route,
)
from .pfaffian import (
    SkewMatrix,
    pf_log_derivative,
    pf_log_second_derivative,
    pfaffian,
    pfaffian_expansion,
)
from .torus import GridSpec, PeriodicField, mixed_hessian, random_field

IDENTITY_THRESHOLD = 1e-10
DET_PF_THRESHOLD = 1e-10
PF_FIRST_THRESHOLD = 1e-7
PF_SECOND_THRESHOLD = 1e-5
ROUTE_THRESHOLD = 1e-9

FAULTS = ("pf_sign_flip",)


class PositivityViolation(ValueError):
    """The requested manufactured amplitude breaks positivity."""


@dataclass(frozen=True)
class CheckResult:
    identity: str
    max_violation: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_violation) and self.max_violation <= self.threshold)


def write_results_csv(rows: Iterable[CheckResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["identity", "max_violation", "threshold", "passed"])
        for r in rows:
            w.writerow([r.identity, f"{r.max_violation:.6e}", f"{r.threshold:.1e}", int(r.passed)])


def format_results(rows: Sequence[CheckResult]) -> str:
    width = max((len(r.identity) for r in rows), default=8)
    lines = []
    for r in rows:
        flag = "ok  " if r.passed else "FAIL"
        lines.append(f"{flag} {r.identity:<{width}}  {r.max_violation:.3e}  (<= {r.threshold:.0e})")
    return "\n".join(lines)


def _pf_function(fault: str | None) -> Callable:
    if fault is None:
        return pfaffian
    if fault == "pf_sign_flip":
        return lambda M: -pfaffian(M)
    raise ValueError(f"unknown fault {fault!r}; known: {', '.join(FAULTS)}")


# ---------------------------------------------------------------------------
# manufactured cases
# ---------------------------------------------------------------------------

Term = tuple  # ((axis, "sin" | "cos"), ...) product of unit-frequency factors


def default_modes(n: int) -> list:
    if n == 1:
        return [((0, "sin"), (1, "sin"))]
    return [((0, "sin"), (4, "sin")), ((1, "cos"), (6, "sin"))]


def mode_field(grid: GridSpec, modes: Sequence[Term], weights: Sequence[float] | None = None) -> np.ndarray:
    x = [grid.coords(a) for a in range(grid.dim)]
    total = np.zeros(grid.shape)
    weights = weights if weights is not None else [1.0] * len(modes)
    for w, term in zip(weights, modes):
        prod = np.ones((1,) * grid.dim)
        for axis, kind in term:
            if kind not in ("sin", "cos"):
                raise ValueError(f"unknown mode kind {kind!r}")
            prod = prod * (np.sin if kind == "sin" else np.cos)(2 * np.pi * x[axis])
        total = total + w * prod
    return total


@dataclass
class ManufacturedCase:
    n: int
    grid: GridSpec
    phi_star: PeriodicField
    f_star: PeriodicField
    margin: float
    modes: list


def make_case(n: int, N: int, amplitude: float, mode_set: Sequence[Term] | None = None,
              weights: Sequence[float] | None = None, min_margin: float = 1e-8) -> ManufacturedCase:
    """``phi* = amplitude * sum(modes)`` (mean removed) and ``f* = log Pf(Omega_phi*)``."""
    grid = GridSpec(n, N)
    modes = list(mode_set) if mode_set is not None else default_modes(n)
    for term in modes:
        for axis, _ in term:
            if not 0 <= axis < grid.dim:
                raise ValueError(f"axis {axis} outside 0..{grid.dim - 1}")
    vals = amplitude * mode_field(grid, modes, weights)
    phi = PeriodicField(grid, vals - vals.mean())
    omega = assemble_omega_phi(phi)
    margin = positivity_check(omega).margin
    if margin < min_margin:
        raise PositivityViolation(f"amplitude {amplitude} gives positivity margin {margin:.3e}")
    f = PeriodicField(grid, np.log(omega.pfaffian().values))
    return ManufacturedCase(n, grid, phi, f, margin, modes)


def random_modes(rng: np.random.Generator, n: int, terms: int = 2) -> tuple[list, list]:
    """Random products of one or two unit-frequency factors with random weights."""
    modes, weights = [], []
    for _ in range(terms):
        k = int(rng.integers(1, 3))
        axes = rng.choice(4 * n, size=k, replace=False)
        modes.append(tuple((int(a), str(rng.choice(["sin", "cos"]))) for a in axes))
        weights.append(float(rng.uniform(-1.0, 1.0)))
    return modes, weights


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def accumulated_entry_hats(phi: PeriodicField) -> dict:
    """Fourier coefficients of ``Omega + d d_J phi`` before rearrangement.

    Sums ``phi_{2i,2jbar} dz_{2i}^dz_{2j+1} + phi_{2i+1,2jbar} dz_{2i+1}^dz_{2j+1}
    - phi_{2i,2j+1bar} dz_{2i}^dz_{2j} - phi_{2i+1,2j+1bar} dz_{2i+1}^dz_{2j}``
    over all ``i, j`` term by term, with separately computed mixed derivatives.
    Returns ``{(p, q): hat}`` for ``p < q``.
    """
    g = phi.grid
    n = g.n
    m = 2 * n
    H = {(a, b): mixed_hessian(phi, a, b).hat for a in range(m) for b in range(m)}
    out = {pq: np.zeros(g.shape, dtype=complex) for pq in itertools.combinations(range(m), 2)}

    def put(p, q, c):
        if p < q:
            out[p, q] += c
        elif q < p:
            out[q, p] -= c

    for i in range(n):
        out[2 * i, 2 * i + 1].flat[0] += 1.0
    for i in range(n):
        for j in range(n):
            put(2 * i, 2 * j + 1, H[2 * i, 2 * j])
            put(2 * i + 1, 2 * j + 1, H[2 * i + 1, 2 * j])
            put(2 * i, 2 * j, -H[2 * i, 2 * j + 1])
            put(2 * i + 1, 2 * j, -H[2 * i + 1, 2 * j + 1])
    return out


def accumulated_omega_phi(phi: PeriodicField) -> np.ndarray:
    """Dense ``(..., 2n, 2n)`` grid values of :func:`accumulated_entry_hats`."""
    g = phi.grid
    m = 2 * g.n
    M = np.zeros(g.shape + (m, m), dtype=complex)
    for (p, q), h in accumulated_entry_hats(phi).items():
        v = PeriodicField(g, hat=h).values
        M[..., p, q] = v
        M[..., q, p] = -v
    return M


def _separable_field(grid: GridSpec, rng, kmax: int) -> PeriodicField:
    """Sum of per-block random fields ``g_alpha(q_alpha)``."""
    block = GridSpec(1, grid.N)
    total = np.zeros((1,) * grid.dim)
    hat = np.zeros(grid.shape, dtype=complex)
    for alpha in range(grid.n):
        part = random_field(block, rng, kmax=kmax)
        shape = [1] * grid.dim
        shape[4 * alpha : 4 * alpha + 4] = [grid.N] * 4
        total = total + part.values.reshape(shape)
        # a block field only has modes with zero wavenumber along the other blocks
        sl = [0] * grid.dim
        sl[4 * alpha : 4 * alpha + 4] = [slice(None)] * 4
        hat[tuple(sl)] += part.hat
    out = PeriodicField(grid, np.broadcast_to(total, grid.shape))
    out._attach_hat(hat)
    return out


# ---------------------------------------------------------------------------
# identity suite
# ---------------------------------------------------------------------------


def _operator_identities(F: FormField) -> dict:
    ops = {"d": FormField.d, "dbar": FormField.dbar, "dJ": FormField.d_J, "dbarJ": FormField.dbar_J}
    first = {k: op(F) for k, op in ops.items()}

    def twice(a, b):
        return ops[a](first[b])

    def anti(a, b):
        return lambda: twice(a, b) + twice(b, a)

    out = {f"{k}^2": (lambda k=k: twice(k, k)) for k in ops}
    for a, b in (("d", "dbar"), ("dJ", "dbarJ"), ("d", "dJ"), ("dbar", "dbarJ"), ("dJ", "dbar"), ("dbarJ", "d")):
        out[f"{{{a},{b}}}"] = anti(a, b)
    return out


def _sup_from_hat(h: np.ndarray, grid: GridSpec) -> float:
    """Exact max norm on small grids, the coefficient l1 bound otherwise."""
    if grid.size <= EXACT_SIZE_LIMIT:
        return float(np.max(np.abs(PeriodicField(grid, hat=h).values)))
    return float(np.sum(np.abs(h)))


def _assembled_hats(omega: HktFormField) -> dict:
    g = omega.grid
    return {(p, q): PeriodicField(g, omega.entry(p, q)).hat
            for p, q in itertools.combinations(range(omega.size), 2)}


def _form_hats(form: FormField, grid: GridSpec) -> dict:
    out = {}
    for p, q in itertools.combinations(range(2 * grid.n), 2):
        c = form.coefficient(hol=(p, q))
        out[p, q] = c.hat() if c.parts else np.zeros(grid.shape, dtype=complex)
    return out


def _hat_defect(grid: GridSpec, first: dict, *rest) -> float:
    """``max_(p,q) sup |first - sum(sign * other)|`` where ``rest`` holds ``(sign, hats)``."""
    worst = 0.0
    for pq, h in first.items():
        diff = h.copy()
        for sign, other in rest:
            diff -= sign * other[pq]
        worst = max(worst, _sup_from_hat(diff, grid))
    return worst


def _canonical_relation_defect(phi: PeriodicField) -> float:
    g = phi.grid
    n = g.n
    Z, Zb = g.z_symbol, g.zbar_symbol
    S = lambda a, b: Z(a) * Zb(b)  # noqa: E731
    hat = phi.hat
    worst = 0.0
    for i in range(n):
        for j in range(n):
            rel = [S(2 * i + 1, 2 * j) - S(2 * j + 1, 2 * i), S(2 * j, 2 * i + 1) - S(2 * i, 2 * j + 1)]
            if i != j:
                rel.append(S(2 * i, 2 * j) + S(2 * j + 1, 2 * i + 1))
            for sym in rel:
                worst = max(worst, _sup_from_hat(sym * hat, g))
    return float(worst)


def run_identity_suite(n: int, N: int, trials: int = 20, seed: int = 0, kmax: int = 2,
                       amplitude: float = 0.01, one_forms: bool | None = None,
                       fault: str | None = None) -> list[CheckResult]:
    """Operator identities, J-realness, assembly cross-checks and mean conservation.

    Random fields are real trigonometric polynomials with ``|k_a| <= kmax``.
    ``one_forms`` additionally runs the operator identities on random complex
    1-forms (default: only when the grid has at most ``2^16`` points).
    """
    grid = GridSpec(n, N)
    rng = np.random.default_rng(seed)
    if one_forms is None:
        one_forms = grid.size <= 1 << 16
    worst: dict[str, float] = {}

    def note(name, value):
        worst[name] = max(worst.get(name, 0.0), float(value))

    sign = -1.0 if fault == "pf_sign_flip" else 1.0
    for _ in range(trials):
        phi = random_field(grid, rng, kmax=kmax, amplitude=1.0)
        F = FormField.function(phi)
        for name, fn in _operator_identities(F).items():
            note(name + " [0-form]", fn().sup_bound())
        if one_forms:
            A = random_form(grid, rng, degree=1, kmax=kmax)
            for name, fn in _operator_identities(A).items():
                note(name + " [1-form]", fn().sup_bound())

        small = phi * amplitude
        omega = assemble_omega_phi(small)
        ddj = FormField.function(small).d_J().d()
        note("J-real Omega_phi", omega.j_real_defect())
        jform = ddj.J() - ddj.conj()
        note("J-real d dJ phi (forms)", jform.sup_bound())
        assembled = _assembled_hats(omega)
        note("assembly = accumulated sum",
             _hat_defect(grid, assembled, (1.0, accumulated_entry_hats(small))))
        std = _form_hats(FormField.standard_omega(grid), grid)
        note("assembly = Omega + d(dJ phi)",
             _hat_defect(grid, assembled, (1.0, std), (1.0, _form_hats(ddj, grid))))
        note("assembly = Omega - dJ(d phi)",
             _hat_defect(grid, assembled, (1.0, std),
                         (-1.0, _form_hats(FormField.function(small).d().d_J(), grid))))
        note("mean Pf(Omega_phi) = 1", abs(sign * omega.pfaffian().mean() - 1.0))
        sep = _separable_field(grid, rng, kmax)
        note("canonical-coordinate relations", _canonical_relation_defect(sep))
    return [CheckResult(k, v, IDENTITY_THRESHOLD) for k, v in worst.items()]


# ---------------------------------------------------------------------------
# Pfaffian batteries
# ---------------------------------------------------------------------------


def random_skew(rng: np.random.Generator, m: int) -> np.ndarray:
    A = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return A - A.T


def det_pf_battery(sizes: Sequence[int] = (2, 4, 6, 8), trials: int = 200, seed: int = 0,
                   fault: str | None = None) -> list[CheckResult]:
    """``Pf^2 = det``, agreement with the expansion oracle, and the normalization."""
    rng = np.random.default_rng(seed)
    pf = _pf_function(fault)
    rows = []
    for m in sizes:
        worst_det = worst_exp = 0.0
        for _ in range(trials):
            A = random_skew(rng, m)
            p = pf(A)
            det = np.linalg.det(A)
            worst_det = max(worst_det, abs(p * p - det) / abs(det))
            worst_exp = max(worst_exp, abs(p - pfaffian_expansion(A)) / max(abs(p), 1e-300))
        rows.append(CheckResult(f"det = Pf^2 (size {m})", worst_det, DET_PF_THRESHOLD))
        rows.append(CheckResult(f"Pf = expansion (size {m})", worst_exp, 1e-11))
    worst_norm = max(abs(pf(SkewMatrix.standard(k)) - 1.0) for k in range(1, 5))
    rows.append(CheckResult("pfaffian_normalization", worst_norm, 1e-15))
    return rows


def _unit(A: np.ndarray) -> np.ndarray:
    return A / np.linalg.norm(A, 2)


def _log_ratio(num: Sequence[complex], den: Sequence[complex]) -> complex:
    # principal log of a ratio close to 1 avoids branch-cut jumps
    return complex(np.log(np.prod(num) / np.prod(den)))


def pf_calculus_battery(trials: int = 100, size: int = 6, seed: int = 0,
                        eps1: float = 1e-6, eps2: float = 1e-4) -> list[CheckResult]:
    """First and second log-Pfaffian derivatives against centered differences.

    Families are ``M + s B + t C + s t D`` around a well-conditioned ``M``.
    """
    rng = np.random.default_rng(seed)
    base = SkewMatrix.standard(size // 2).dense()
    w1 = w2 = 0.0
    for _ in range(trials):
        # singular values of M stay >= 1/2, directions have unit spectral norm
        M = base + 0.5 * _unit(random_skew(rng, size))
        B, C, D = (_unit(random_skew(rng, size)) for _ in range(3))
        fam = lambda s, t: M + s * B + t * C + s * t * D  # noqa: E731
        fd1 = _log_ratio([pfaffian(M + eps1 * B)], [pfaffian(M - eps1 * B)]) / (2 * eps1)
        w1 = max(w1, abs(fd1 - pf_log_derivative(M, B)))
        e = eps2
        fd2 = _log_ratio(
            [pfaffian(fam(e, e)), pfaffian(fam(-e, -e))], [pfaffian(fam(e, -e)), pfaffian(fam(-e, e))]
        ) / (4 * e * e)
        w2 = max(w2, abs(fd2 - pf_log_second_derivative(M, B, C, D)))
    return [
        CheckResult("d log Pf (first)", w1, PF_FIRST_THRESHOLD),
        CheckResult("d2 log Pf (second)", w2, PF_SECOND_THRESHOLD),
    ]


# ---------------------------------------------------------------------------
# routes and linearization
# ---------------------------------------------------------------------------


def route_battery(cases: Iterable[ManufacturedCase], fault: str | None = None) -> list[CheckResult]:
    sign = -1.0 if fault == "pf_sign_flip" else 1.0
    rows = []
    for k, case in enumerate(cases):
        pf = sign * qma_pfaffian_route(case.phi_star).values
        mo = qma_moore_route(case.phi_star).values
        rows.append(CheckResult(f"Moore = Pfaffian (case {k}, n={case.n}, N={case.grid.N})",
                                float(np.max(np.abs(pf - mo))), ROUTE_THRESHOLD))
    return rows


def route_cases(seed: int = 0, count: int = 10, sizes=((1, 8), (2, 4))) -> list[ManufacturedCase]:
    """``count`` positive random manufactured cases alternating over ``sizes``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n, N = sizes[len(out) % len(sizes)]
        modes, weights = random_modes(rng, n, terms=3)
        amp = 0.05 if n == 1 else 0.02
        try:
            out.append(make_case(n, N, amp, modes, weights))
        except PositivityViolation:
            continue
    return out


def finite_difference_linearization_check(phi: PeriodicField, psi: PeriodicField, eps: float = 1e-5) -> float:
    """Max over the grid of ``|centered FD of log Pf(Omega_{phi + s psi}) - L_phi psi|``."""
    lin = Linearization(assemble_omega_phi(phi))
    plus = assemble_omega_phi(phi + psi * eps).pfaffian().values
    minus = assemble_omega_phi(phi - psi * eps).pfaffian().values
    fd = np.log(plus / minus) / (2 * eps)
    return float(np.max(np.abs(fd - lin.apply(psi).values)))


def linearization_battery(n: int = 1, N: int = 8, trials: int = 3, seed: int = 0,
                          eps: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    grid = GridSpec(n, N)
    worst = 0.0
    for _ in range(trials):
        phi = random_field(grid, rng, kmax=1, amplitude=0.01)
        psi = random_field(grid, rng, kmax=1, amplitude=0.05)
        worst = max(worst, finite_difference_linearization_check(phi, psi, eps))
    return [CheckResult(f"linearization vs FD (n={n})", worst, 1e-7)]
