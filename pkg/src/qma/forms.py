"""Complex differential forms on the flat torus in holomorphic coordinates.

A form is a dictionary from a basis monomial ``dz_I ^ dzbar_K`` (``I`` and
``K`` increasing index tuples, holomorphic factors first) to a coefficient.
Coefficients are :class:`SpectralTerm` objects: finite sums
``sum_b S_b * base_b`` of Fourier multipliers applied to real base fields.
Every operator used here (``d``-type derivatives, ``J``, conjugation) acts on
the multipliers alone, so long compositions never touch the full grid until a
norm is requested.

The complex structure ``J`` acts on 1-forms by

    J(dz_j)    = (-1)^(j+1) dzbar_{s(j)}
    J(dzbar_j) = (-1)^(j+1) dz_{s(j)},      s(j) = j + (-1)^j,

and on higher degree forms factor by factor.  Then ``J^2 = (-1)^k`` on
``k``-forms, ``d_J = J^{-1} dbar J`` and ``dbar_J = J^{-1} d J``.
"""

from __future__ import annotations

from typing import Dict, Tuple

import numpy as np

from .torus import GridSpec, PeriodicField

Monomial = Tuple[Tuple[int, ...], Tuple[int, ...]]

EXACT_SIZE_LIMIT = 1 << 16


def _reflect(symbol: np.ndarray) -> np.ndarray:
    """``S(-k)`` for a broadcastable multiplier array."""
    out = symbol
    for ax, size in enumerate(symbol.shape):
        if size > 1:
            out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


class SpectralTerm:
    """Sum of Fourier multipliers applied to real base fields."""

    __slots__ = ("grid", "parts")

    def __init__(self, grid: GridSpec, parts):
        self.grid = grid
        self.parts = dict(parts)  # id(base) -> (base, symbol)

    @classmethod
    def of(cls, field: PeriodicField) -> "SpectralTerm":
        if not field.real:
            raise ValueError("base fields must be real")
        return cls(field.grid, {id(field): (field, np.ones((1,) * field.grid.dim, dtype=complex))})

    @classmethod
    def constant(cls, grid: GridSpec, c: complex) -> "SpectralTerm":
        one = _unit_field(grid)
        return cls(grid, {id(one): (one, np.full((1,) * grid.dim, complex(c)))})

    def _map(self, fn) -> "SpectralTerm":
        return SpectralTerm(self.grid, {k: (b, fn(s)) for k, (b, s) in self.parts.items()})

    def __add__(self, other: "SpectralTerm") -> "SpectralTerm":
        parts = dict(self.parts)
        for k, (b, s) in other.parts.items():
            parts[k] = (b, parts[k][1] + s) if k in parts else (b, s)
        return SpectralTerm(self.grid, parts)

    def __neg__(self) -> "SpectralTerm":
        return self._map(lambda s: -s)

    def __sub__(self, other: "SpectralTerm") -> "SpectralTerm":
        return self + (-other)

    def __mul__(self, c) -> "SpectralTerm":
        c = complex(c)
        return self._map(lambda s: s * c)

    __rmul__ = __mul__

    def d_z(self, a: int) -> "SpectralTerm":
        Z = self.grid.z_symbol(a)
        return self._map(lambda s: s * Z)

    def d_zbar(self, a: int) -> "SpectralTerm":
        Zb = self.grid.zbar_symbol(a)
        return self._map(lambda s: s * Zb)

    def conj(self) -> "SpectralTerm":
        # conj(S * b^)(k) = conj(S(-k)) * b^(k) for a real base b
        return self._map(lambda s: np.conj(_reflect(s)))

    def hat(self) -> np.ndarray:
        out = np.zeros(self.grid.shape, dtype=complex)
        for b, s in self.parts.values():
            out += s * b.hat
        return out

    def field(self) -> PeriodicField:
        return PeriodicField(self.grid, hat=self.hat(), real=False)

    def sup_bound(self) -> float:
        """Max norm on the grid (exact for small grids, else the l1 coefficient bound)."""
        if not self.parts:
            return 0.0
        if self.grid.size <= EXACT_SIZE_LIMIT:
            return PeriodicField(self.grid, hat=self.hat(), real=False).sup_norm()
        boxed = [_band_box(b) for b, _ in self.parts.values()]
        if any(h is None for h in boxed):
            return float(np.abs(self.hat()).sum())
        # every base lives off the Nyquist planes, so the sum can skip them
        keep = _band_index(self.grid.N)
        acc = 0
        for h, (_, sym) in zip(boxed, self.parts.values()):
            for ax in range(sym.ndim):
                if sym.shape[ax] > 1:
                    sym = np.take(sym, keep, axis=ax)
            acc = acc + sym * h
        return float(np.abs(acc).sum())


def _band_index(N: int) -> np.ndarray:
    return np.delete(np.arange(N), N // 2)


def _band_box(field: PeriodicField):
    """Coefficients of ``field`` on the non-Nyquist box, or ``None`` if it leaks outside."""
    hit = _BOX_CACHE.get(id(field))
    if hit is not None and hit[0] is field:
        return hit[1]
    h = field.hat
    keep = _band_index(field.grid.N)
    box = h[np.ix_(*([keep] * h.ndim))]
    total = np.abs(h).sum()
    if total - np.abs(box).sum() > 1e-15 * max(total, 1.0):
        box = None
    _BOX_CACHE[id(field)] = (field, box)
    while len(_BOX_CACHE) > 8:
        _BOX_CACHE.pop(next(iter(_BOX_CACHE)))
    return box


_BOX_CACHE: dict = {}


_UNIT_CACHE: dict = {}


def _unit_field(grid: GridSpec) -> PeriodicField:
    f = _UNIT_CACHE.get(grid)
    if f is None:
        f = PeriodicField.constant(grid, 1.0)
        _UNIT_CACHE[grid] = f
    return f


def _canonical(factors):
    """Sort ``(kind, index)`` factors; return ``(sign, monomial)`` or ``(0, None)``."""
    f = list(factors)
    if len(set(f)) < len(f):
        return 0, None
    sign = 1
    # insertion sort keeps track of the permutation parity
    for i in range(1, len(f)):
        j = i
        while j > 0 and f[j - 1] > f[j]:
            f[j - 1], f[j] = f[j], f[j - 1]
            sign = -sign
            j -= 1
    hol = tuple(i for k, i in f if k == 0)
    anti = tuple(i for k, i in f if k == 1)
    return sign, (hol, anti)


def _factors(mono: Monomial):
    hol, anti = mono
    return [(0, i) for i in hol] + [(1, i) for i in anti]


def sigma(j: int) -> int:
    return j + (-1) ** j


class FormField:
    """Differential form with :class:`SpectralTerm` coefficients."""

    __slots__ = ("grid", "terms")

    def __init__(self, grid: GridSpec, terms: Dict[Monomial, SpectralTerm] | None = None):
        self.grid = grid
        self.terms = dict(terms or {})

    # construction ------------------------------------------------------

    @classmethod
    def function(cls, phi: PeriodicField) -> "FormField":
        return cls(phi.grid, {((), ()): SpectralTerm.of(phi)})

    @classmethod
    def monomial(cls, grid: GridSpec, hol=(), anti=(), coeff: SpectralTerm | None = None) -> "FormField":
        sign, mono = _canonical([(0, i) for i in hol] + [(1, i) for i in anti])
        if sign == 0:
            return cls(grid)
        c = coeff if coeff is not None else SpectralTerm.constant(grid, 1.0)
        return cls(grid, {mono: c * sign})

    @classmethod
    def standard_omega(cls, grid: GridSpec) -> "FormField":
        """``sum_i dz_{2i} ^ dz_{2i+1}``."""
        out = cls(grid)
        for i in range(grid.n):
            out = out + cls.monomial(grid, (2 * i, 2 * i + 1))
        return out

    # algebra -------------------------------------------------------------

    def _accumulate(self, items) -> "FormField":
        terms: Dict[Monomial, SpectralTerm] = {}
        for mono, coeff in items:
            terms[mono] = terms[mono] + coeff if mono in terms else coeff
        return FormField(self.grid, terms)

    def __add__(self, other: "FormField") -> "FormField":
        return self._accumulate(list(self.terms.items()) + list(other.terms.items()))

    def __neg__(self) -> "FormField":
        return FormField(self.grid, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other: "FormField") -> "FormField":
        return self + (-other)

    def __mul__(self, c) -> "FormField":
        return FormField(self.grid, {m: t * c for m, t in self.terms.items()})

    __rmul__ = __mul__

    def wedge(self, other: "FormField") -> "FormField":
        """Wedge product; only valid when one side has constant coefficients."""
        items = []
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                sign, mono = _canonical(_factors(m1) + _factors(m2))
                if sign:
                    items.append((mono, _product(c1, c2) * sign))
        return self._accumulate(items)

    def degree_part(self, k: int) -> "FormField":
        return FormField(self.grid, {m: c for m, c in self.terms.items() if len(m[0]) + len(m[1]) == k})

    def bidegree(self) -> set:
        return {(len(h), len(a)) for h, a in self.terms}

    # operators -----------------------------------------------------------

    def d(self) -> "FormField":
        """Holomorphic derivative ``sum_a dz_a ^ d/dz_a``."""
        items = []
        for mono, c in self.terms.items():
            for a in range(2 * self.grid.n):
                sign, m = _canonical([(0, a)] + _factors(mono))
                if sign:
                    items.append((m, c.d_z(a) * sign))
        return self._accumulate(items)

    def dbar(self) -> "FormField":
        items = []
        for mono, c in self.terms.items():
            for b in range(2 * self.grid.n):
                sign, m = _canonical([(1, b)] + _factors(mono))
                if sign:
                    items.append((m, c.d_zbar(b) * sign))
        return self._accumulate(items)

    def J(self) -> "FormField":
        items = []
        for mono, c in self.terms.items():
            sign = 1
            mapped = []
            for kind, j in _factors(mono):
                sign *= (-1) ** (j + 1)
                mapped.append((1 - kind, sigma(j)))
            s2, m = _canonical(mapped)
            items.append((m, c * (sign * s2)))
        return self._accumulate(items)

    def J_inv(self) -> "FormField":
        out = self.J()
        return FormField(
            self.grid,
            {m: (c * (-1) ** (len(m[0]) + len(m[1]))) for m, c in out.terms.items()},
        )

    def conj(self) -> "FormField":
        items = []
        for (hol, anti), c in self.terms.items():
            sign, m = _canonical([(0, i) for i in anti] + [(1, i) for i in hol])
            items.append((m, c.conj() * sign))
        return self._accumulate(items)

    def d_J(self) -> "FormField":
        return self.J().dbar().J_inv()

    def dbar_J(self) -> "FormField":
        return self.J().d().J_inv()

    # norms ---------------------------------------------------------------

    def sup_bound(self) -> float:
        """Largest coefficient max norm."""
        return max((c.sup_bound() for c in self.terms.values()), default=0.0)

    def coefficient(self, hol=(), anti=()) -> SpectralTerm:
        sign, mono = _canonical([(0, i) for i in hol] + [(1, i) for i in anti])
        if sign == 0 or mono not in self.terms:
            return SpectralTerm(self.grid, {})
        return self.terms[mono] * sign


def _product(c1: SpectralTerm, c2: SpectralTerm) -> SpectralTerm:
    # a constant coefficient is a multiple of the unit field with a 0-d symbol
    for const, other in ((c1, c2), (c2, c1)):
        if _is_constant(const):
            (b, s), = const.parts.values()
            return other * complex(s.ravel()[0])
    raise ValueError("wedge of two non-constant coefficients is not supported")


def _is_constant(c: SpectralTerm) -> bool:
    if len(c.parts) != 1:
        return False
    (b, s), = c.parts.values()
    return b is _UNIT_CACHE.get(c.grid) and s.size == 1


def random_form(grid: GridSpec, rng, degree: int = 1, kmax: int = 1, amplitude: float = 1.0) -> FormField:
    """Form of the given degree with independent random complex coefficients."""
    from itertools import combinations

    from .torus import random_field

    m = 2 * grid.n
    out = FormField(grid)
    for p in range(degree + 1):
        q = degree - p
        for hol in combinations(range(m), p):
            for anti in combinations(range(m), q):
                re = SpectralTerm.of(random_field(grid, rng, kmax=kmax, amplitude=amplitude))
                im = SpectralTerm.of(random_field(grid, rng, kmax=kmax, amplitude=amplitude))
                out = out + FormField(grid, {(hol, anti): re + im * 1j})
    return out
