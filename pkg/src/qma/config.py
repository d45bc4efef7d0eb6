"""Flat ``key = value`` run configuration.

Grammar (one entry per line)::

    # comment
    key = value

Blank lines and ``#`` comments are ignored.  Keys are case-sensitive; keys
marked repeatable may appear several times, every other key at most once.
Unknown keys and keys that do not apply to the command are errors.

Field terms (``f_term``, ``sigma_term``) read ``<sin|cos> <k_0,...,k_{4n-1}> <amplitude>``
and stand for ``amplitude * sin(2 pi k . x)`` (or ``cos``).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .torus import GridSpec, PeriodicField


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _pos_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise ValueError("must be > 0")
    return v


def _choice(*options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


def _list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


SOLVE, VERIFY, VOLUME = "solve", "verify", "volume"
ALL = (SOLVE, VERIFY, VOLUME)
BATTERIES = ("identities", "det_pf", "pf_calculus", "routes", "linearization")

# key -> (parser, default, commands, repeatable)
SCHEMA = {
    "n": (_positive_int, 1, ALL, False),
    "points_per_axis": (_positive_int, None, ALL, False),
    "seed": (int, 0, ALL, False),
    # right-hand side
    "f_term": (str, [], (SOLVE,), True),
    "f_form": (_choice("sum", "log1p"), "sum", (SOLVE,), False),
    "f_file": (str, None, (SOLVE,), False),
    "manufactured_amplitude": (float, None, (SOLVE,), False),
    "reference_phi_file": (str, None, (SOLVE,), False),
    # volume density
    "sigma_term": (str, [], (VOLUME,), True),
    "sigma_form": (_choice("exp", "linear"), "exp", (VOLUME,), False),
    "sigma_file": (str, None, (VOLUME,), False),
    # solver overrides
    "newton_tol": (_pos_float, None, (SOLVE, VOLUME), False),
    "max_newton": (_positive_int, None, (SOLVE, VOLUME), False),
    "t_step_init": (_pos_float, None, (SOLVE, VOLUME), False),
    "t_step_min": (_pos_float, None, (SOLVE, VOLUME), False),
    "damping": (_pos_float, None, (SOLVE, VOLUME), False),
    "krylov_tol": (_pos_float, None, (SOLVE, VOLUME), False),
    "krylov_max_iter": (_positive_int, None, (SOLVE, VOLUME), False),
    "positivity_margin": (_pos_float, None, (SOLVE, VOLUME), False),
    # verification
    "batteries": (_list, list(BATTERIES), (VERIFY,), False),
    "trials": (_positive_int, 20, (VERIFY,), False),
    "det_trials": (_positive_int, 200, (VERIFY,), False),
    "det_sizes": (_list, ["2", "4", "6", "8"], (VERIFY,), False),
    "calculus_trials": (_positive_int, 100, (VERIFY,), False),
    "route_cases": (_positive_int, 10, (VERIFY,), False),
    "fault_injection": (_choice("none", "pf_sign_flip"), "none", (VERIFY,), False),
}

SOLVER_KEYS = (
    "newton_tol", "max_newton", "t_step_init", "t_step_min", "damping",
    "krylov_tol", "krylov_max_iter", "positivity_margin",
)

DEFAULT_POINTS = {1: 16, 2: 6}


@dataclass
class RunConfig:
    command: str
    values: dict
    source: Path | None = None

    def __getitem__(self, key):
        return self.values[key]

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self["n"], self["points_per_axis"])

    def solver_overrides(self) -> dict:
        return {k: self.values[k] for k in SOLVER_KEYS if self.values.get(k) is not None}

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p


def parse_config(text: str, command: str, source: Path | None = None) -> RunConfig:
    if command not in ALL:
        raise ConfigError(f"unknown command {command!r}")
    seen: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser, _, commands, repeatable = SCHEMA[key]
        if command not in commands:
            raise ConfigError(f"line {lineno}: key {key!r} does not apply to '{command}'")
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        if repeatable:
            seen.setdefault(key, []).append(parsed)
        elif key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        else:
            seen[key] = parsed
    values = {}
    for key, (_, default, commands, _) in SCHEMA.items():
        if command in commands:
            values[key] = seen.get(key, list(default) if isinstance(default, list) else default)
    if values["points_per_axis"] is None:
        values["points_per_axis"] = DEFAULT_POINTS.get(values["n"], 4)
    cfg = RunConfig(command, values, source)
    try:
        cfg.grid
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _validate(cfg)
    return cfg


def load_config(path, command: str) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, command, p)


def _validate(cfg: RunConfig) -> None:
    v = cfg.values
    n = v["n"]
    if cfg.command == SOLVE:
        sources = [bool(v["f_term"]), v["f_file"] is not None, v["manufactured_amplitude"] is not None]
        if sum(sources) > 1:
            raise ConfigError("give at most one of f_term, f_file, manufactured_amplitude")
        for t in v["f_term"]:
            parse_term(t, n)
    if cfg.command == VOLUME:
        if v["sigma_term"] and v["sigma_file"] is not None:
            raise ConfigError("give at most one of sigma_term, sigma_file")
        for t in v["sigma_term"]:
            parse_term(t, n)
    if cfg.command == VERIFY:
        bad = [b for b in v["batteries"] if b not in BATTERIES]
        if bad:
            raise ConfigError(f"unknown batteries: {', '.join(bad)}")
        try:
            sizes = [int(s) for s in v["det_sizes"]]
        except ValueError:
            raise ConfigError("det_sizes must be integers") from None
        if any(s < 2 or s % 2 for s in sizes):
            raise ConfigError("det_sizes must be even and >= 2")
        v["det_sizes"] = sizes


def parse_term(text: str, n: int) -> tuple[str, tuple[int, ...], float]:
    parts = text.split()
    if len(parts) != 3:
        raise ConfigError(f"term {text!r}: expected '<sin|cos> <k,...> <amplitude>'")
    kind, kvec, amp = parts
    if kind not in ("sin", "cos"):
        raise ConfigError(f"term {text!r}: kind must be sin or cos")
    try:
        k = tuple(int(c) for c in kvec.split(","))
        a = float(amp)
    except ValueError:
        raise ConfigError(f"term {text!r}: malformed mode vector or amplitude") from None
    if len(k) != 4 * n:
        raise ConfigError(f"term {text!r}: mode vector needs {4 * n} entries")
    return kind, k, a


def terms_field(grid: GridSpec, terms) -> np.ndarray:
    x = [grid.coords(a) for a in range(grid.dim)]
    total = np.zeros(grid.shape)
    for kind, k, amp in terms:
        phase = sum(2 * np.pi * ka * xa for ka, xa in zip(k, x) if ka)
        phase = phase + np.zeros((1,) * grid.dim)
        total = total + amp * (np.sin(phase) if kind == "sin" else np.cos(phase))
    return total


def build_f(cfg: RunConfig) -> PeriodicField:
    """The ``f`` field described by ``f_term`` / ``f_form`` (zero when no term is given)."""
    grid = cfg.grid
    terms = [parse_term(t, grid.n) for t in cfg["f_term"]]
    s = terms_field(grid, terms)
    if cfg["f_form"] == "log1p":
        if np.min(1.0 + s) <= 0:
            raise ConfigError("f_form = log1p needs 1 + sum(terms) > 0")
        s = np.log1p(s)
    return PeriodicField(grid, s)


def build_sigma(cfg: RunConfig) -> PeriodicField:
    grid = cfg.grid
    terms = [parse_term(t, grid.n) for t in cfg["sigma_term"]]
    s = terms_field(grid, terms)
    if cfg["sigma_form"] == "exp":
        e = np.exp(s)
        return PeriodicField(grid, e / e.mean())
    return PeriodicField(grid, 1.0 + s)
