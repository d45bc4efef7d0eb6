"""Periodic fields on the flat torus R^{4n} / Z^{4n} with spectral calculus.

A field is sampled on a uniform ``N^{4n}`` grid (period 1 on every axis) and
keeps both its grid values and its Fourier coefficients, each computed lazily
from the other.  Coefficients use the "forward" normalization, so the zero
mode is the mean.  All derivatives are Fourier multipliers; the first
derivative symbol ``2 pi i k`` is set to zero on the Nyquist mode, and higher
derivatives are compositions of first ones.

Holomorphic coordinates follow ``z_{2j} = x_{4j} + i x_{4j+1}`` and
``z_{2j+1} = x_{4j+2} - i x_{4j+3}``.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .quat import qmul_arrays

REAL_ATOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """``N`` points on each of the ``4n`` axes of the unit torus."""

    n: int
    N: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("quaternionic dimension n must be >= 1")
        if self.N < 4 or self.N % 2:
            raise ValueError(f"points per axis must be even and >= 4, got {self.N}")
        if self.N ** (4 * self.n) > np.iinfo(np.int64).max:
            raise ValueError("grid too large")

    @property
    def dim(self) -> int:
        return 4 * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    def coords(self, axis: int) -> np.ndarray:
        """Grid coordinate ``x_axis`` shaped for broadcasting."""
        return _axis_view(np.arange(self.N) / self.N, axis, self.dim)

    def wavenumbers(self, axis: int) -> np.ndarray:
        return _axis_view(_wavenumbers(self.N).astype(float), axis, self.dim)

    def deriv_symbol(self, axis: int) -> np.ndarray:
        return _deriv_symbol(self.N, axis, self.dim)

    def z_symbol(self, a: int) -> np.ndarray:
        """Multiplier of ``d/dz_a``."""
        return _z_symbols(self.n, self.N)[0][a]

    def zbar_symbol(self, a: int) -> np.ndarray:
        return _z_symbols(self.n, self.N)[1][a]

    def band_mask(self) -> np.ndarray:
        """Modes without any Nyquist component."""
        return _band_mask(self.n, self.N)

    def quarter_laplacian_symbol(self) -> np.ndarray:
        """Multiplier of ``sum_a d_{z_a} d_{zbar_a} = Laplacian / 4``."""
        return _quarter_laplacian(self.n, self.N)


def _axis_view(v: np.ndarray, axis: int, dim: int) -> np.ndarray:
    shape = [1] * dim
    shape[axis] = v.size
    return v.reshape(shape)


@functools.lru_cache(maxsize=None)
def _wavenumbers(N: int) -> np.ndarray:
    return np.rint(np.fft.fftfreq(N) * N).astype(np.int64)


@functools.lru_cache(maxsize=None)
def _deriv_symbol(N: int, axis: int, dim: int) -> np.ndarray:
    k = _wavenumbers(N).astype(float)
    if N % 2 == 0:
        k[N // 2] = 0.0
    return _axis_view(2j * np.pi * k, axis, dim)


@functools.lru_cache(maxsize=None)
def _z_symbols(n: int, N: int):
    dim = 4 * n
    D = [_deriv_symbol(N, a, dim) for a in range(dim)]
    Z, Zb = [], []
    for j in range(n):
        Z.append(0.5 * (D[4 * j] - 1j * D[4 * j + 1]))
        Z.append(0.5 * (D[4 * j + 2] + 1j * D[4 * j + 3]))
        Zb.append(0.5 * (D[4 * j] + 1j * D[4 * j + 1]))
        Zb.append(0.5 * (D[4 * j + 2] - 1j * D[4 * j + 3]))
    return tuple(Z), tuple(Zb)


@functools.lru_cache(maxsize=4)
def _band_mask(n: int, N: int) -> np.ndarray:
    ok = np.ones(N, dtype=bool)
    if N % 2 == 0:
        ok[N // 2] = False
    m = np.ones((1,) * (4 * n), dtype=bool)
    for a in range(4 * n):
        m = m & _axis_view(ok, a, 4 * n)
    return m


@functools.lru_cache(maxsize=4)
def _quarter_laplacian(n: int, N: int) -> np.ndarray:
    dim = 4 * n
    out = np.zeros((N,) * dim)
    for a in range(dim):
        out = out + (_deriv_symbol(N, a, dim) ** 2).real
    return 0.25 * out


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def _fftn(v: np.ndarray) -> np.ndarray:
    return sfft.fftn(v, norm="forward", workers=-1)


def _ifftn(h: np.ndarray) -> np.ndarray:
    return sfft.ifftn(h, norm="forward", workers=-1)


class PeriodicField:
    """Real or complex scalar field on a :class:`GridSpec` grid.

    Instances are immutable.  Construct with ``values`` (grid samples) or with
    ``hat`` (Fourier coefficients); the other representation is computed on
    first access.
    """

    __slots__ = ("grid", "real", "_values", "_hat")

    def __init__(self, grid: GridSpec, values=None, *, hat=None, real: bool | None = None):
        if (values is None) == (hat is None):
            raise ValueError("pass exactly one of values or hat")
        self.grid = grid
        if values is not None:
            v = np.asarray(values)
            if v.shape != grid.shape:
                v = np.broadcast_to(v, grid.shape)
            if real is None:
                real = not np.iscomplexobj(v)
            v = np.array(v.real if real else v, dtype=float if real else complex)
            v.setflags(write=False)
            self._values, self._hat = v, None
        else:
            h = np.array(np.broadcast_to(hat, grid.shape), dtype=complex)
            h.setflags(write=False)
            self._values, self._hat = None, h
            real = bool(real)
        self.real = bool(real)

    @classmethod
    def constant(cls, grid: GridSpec, c) -> "PeriodicField":
        return cls(grid, np.full(grid.shape, c))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "PeriodicField":
        """Sample ``fn(x)`` where ``x`` is the list of broadcastable axis coordinates."""
        x = [grid.coords(a) for a in range(grid.dim)]
        return cls(grid, fn(x))

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            v = _ifftn(self._hat)
            if self.real:
                v = v.real
            v.setflags(write=False)
            self._values = v
        return self._values

    @property
    def hat(self) -> np.ndarray:
        if self._hat is None:
            h = _fftn(self._values)
            h.setflags(write=False)
            self._hat = h
        return self._hat

    def _attach_hat(self, h: np.ndarray) -> None:
        # caller guarantees h is the transform of the stored values
        h = np.asarray(h, dtype=complex)
        h.setflags(write=False)
        self._hat = h

    @property
    def has_values(self) -> bool:
        return self._values is not None

    def mean(self):
        m = self.values.mean() if self.has_values else self.hat.flat[0]
        return float(m.real) if self.real else complex(m)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def sup_bound(self) -> float:
        """Upper bound of the max norm that avoids a transform when possible.

        Exact maximum if grid values are available, otherwise the l1 norm of
        the Fourier coefficients.
        """
        if self.has_values:
            return self.sup_norm()
        return float(np.abs(self._hat).sum())

    def conj(self) -> "PeriodicField":
        if self.real:
            return self
        if self.has_values:
            return PeriodicField(self.grid, self._values.conj())
        h = self._hat
        rev = np.conj(np.roll(np.flip(h), 1, axis=tuple(range(h.ndim))))
        return PeriodicField(self.grid, hat=rev, real=False)

    def real_part(self) -> "PeriodicField":
        if self.real:
            return self
        return PeriodicField(self.grid, self.values.real)

    def imag_part(self) -> "PeriodicField":
        return PeriodicField(self.grid, np.imag(self.values) if not self.real else np.zeros(self.grid.shape))

    def as_real(self, atol: float = REAL_ATOL) -> "PeriodicField":
        """Drop a round-off imaginary part; raise if it is larger than ``atol``."""
        if self.real:
            return self
        im = float(np.max(np.abs(self.values.imag)))
        if im > atol:
            raise ValueError(f"field is not real (max |imag| = {im:.3e})")
        return PeriodicField(self.grid, self.values.real)

    # arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, PeriodicField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other
        return None

    def _linear(self, other, op):
        o = self._coerce(other)
        if o is None:
            c = complex(other)
            real = self.real and c.imag == 0
            if self.has_values:
                return PeriodicField(self.grid, op(self._values, c.real if real else c), real=real)
            h = np.array(self._hat)
            h.flat[0] = op(h.flat[0], c)
            return PeriodicField(self.grid, hat=h, real=real)
        real = self.real and o.real
        if self.has_values or o.has_values:
            return PeriodicField(self.grid, op(self.values, o.values), real=real)
        return PeriodicField(self.grid, hat=op(self._hat, o._hat), real=real)

    def __add__(self, other):
        return self._linear(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._linear(other, np.subtract)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        if self.has_values:
            return PeriodicField(self.grid, -self._values, real=self.real)
        return PeriodicField(self.grid, hat=-self._hat, real=self.real)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            c = complex(other)
            real = self.real and c.imag == 0
            s = c.real if real else c
            if self.has_values:
                out = PeriodicField(self.grid, self._values * s, real=real)
                if self._hat is not None:
                    out._attach_hat(self._hat * s)
                return out
            return PeriodicField(self.grid, hat=self._hat * s, real=real)
        return PeriodicField(self.grid, self.values * o.values, real=self.real and o.real)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return self * (1.0 / complex(other) if np.iscomplexobj(other) else 1.0 / float(other))
        return PeriodicField(self.grid, self.values / o.values, real=self.real and o.real)

    def apply(self, fn) -> "PeriodicField":
        return PeriodicField(self.grid, fn(self.values))

    def multiplier(self, symbol, real: bool | None = None) -> "PeriodicField":
        """Apply a Fourier multiplier; the result stays in coefficient form."""
        if real is None:
            real = False
        return PeriodicField(self.grid, hat=self.hat * symbol, real=real)

    def __repr__(self):
        kind = "real" if self.real else "complex"
        return f"PeriodicField({kind}, n={self.grid.n}, N={self.grid.N})"


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def d_real(field: PeriodicField, axis: int) -> PeriodicField:
    """``d/dx_axis``; keeps real fields real."""
    return field.multiplier(field.grid.deriv_symbol(axis), real=field.real)


def d_z(field: PeriodicField, a: int) -> PeriodicField:
    return field.multiplier(field.grid.z_symbol(a))


def d_zbar(field: PeriodicField, a: int) -> PeriodicField:
    return field.multiplier(field.grid.zbar_symbol(a))


def mixed_hessian(field: PeriodicField, a: int, b: int) -> PeriodicField:
    """``phi_{a bbar} = d_{z_a} d_{zbar_b} phi``."""
    g = field.grid
    return field.multiplier(g.z_symbol(a) * g.zbar_symbol(b))


def laplacian(field: PeriodicField) -> PeriodicField:
    return field.multiplier(4.0 * field.grid.quarter_laplacian_symbol(), real=field.real)


def solve_quarter_laplacian(rhs: PeriodicField) -> PeriodicField:
    """Mean-zero ``u`` with ``Laplacian(u) / 4 = rhs`` on the non-Nyquist band.

    The zero mode and every mode the symbol annihilates are set to zero.
    """
    sym = rhs.grid.quarter_laplacian_symbol()
    band = rhs.grid.band_mask()
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(band & (sym != 0), 1.0 / np.where(sym == 0, 1.0, sym), 0.0)
    return PeriodicField(rhs.grid, hat=rhs.hat * inv, real=rhs.real)


def project_band(field: PeriodicField) -> PeriodicField:
    """Remove every Fourier mode with a Nyquist component."""
    return PeriodicField(field.grid, hat=field.hat * field.grid.band_mask(), real=field.real)


def mean(field: PeriodicField):
    return field.mean()


def integral(field: PeriodicField):
    """Integral over the unit torus (volume 1), i.e. the mean."""
    return field.mean()


# ---------------------------------------------------------------------------
# Cauchy-Riemann-Fueter operators
# ---------------------------------------------------------------------------


def _unit_matrices():
    E = np.eye(4)
    left = np.stack([qmul_arrays(E[r], E) for r in range(4)])  # left[r] @ e_s = e_r e_s
    right = np.stack([qmul_arrays(E, E[r]) for r in range(4)])  # e_s e_r
    return np.transpose(left, (0, 2, 1)), np.transpose(right, (0, 2, 1))


_LEFT, _RIGHT = _unit_matrices()
_CONJ = np.array([1.0, -1.0, -1.0, -1.0])


class QuaternionField:
    """Quaternion-valued field: four real :class:`PeriodicField` components."""

    __slots__ = ("components",)

    def __init__(self, components):
        comps = tuple(components)
        if len(comps) != 4:
            raise ValueError("a quaternion field has four components")
        self.components = comps

    @property
    def grid(self) -> GridSpec:
        return self.components[0].grid

    def __getitem__(self, r) -> PeriodicField:
        return self.components[r]

    def __add__(self, other: "QuaternionField") -> "QuaternionField":
        return QuaternionField(a + b for a, b in zip(self.components, other.components))

    def _signed_perm(self, mat) -> "QuaternionField":
        out = []
        for row in mat:
            acc = None
            for s, w in enumerate(row):
                if w != 0:
                    term = self.components[s] * float(w)
                    acc = term if acc is None else acc + term
            out.append(acc)
        return QuaternionField(out)

    def left_mul_unit(self, r: int) -> "QuaternionField":
        """``e_r * self`` with ``e = (1, i, j, k)``."""
        return self._signed_perm(_LEFT[r])

    def right_mul_unit(self, r: int) -> "QuaternionField":
        return self._signed_perm(_RIGHT[r])

    def values(self) -> np.ndarray:
        """Stacked ``(..., 4)`` array of grid values."""
        return np.stack([c.values for c in self.components], axis=-1)

    def sup_norm(self) -> float:
        return float(np.max(np.sqrt(sum(c.values**2 for c in self.components))))


def _scalar_to_quat(f: PeriodicField) -> QuaternionField:
    z = PeriodicField(f.grid, hat=np.zeros(f.grid.shape), real=True)
    return QuaternionField((f, z, z, z))


def crf_dbar(field, alpha: int) -> QuaternionField:
    """``d f / d qbar_alpha = f_0 + i f_1 + j f_2 + k f_3`` (units on the left).

    ``f_r`` is the derivative along ``x_{4 alpha + r}``.  A real scalar field
    is the main input; a :class:`QuaternionField` is differentiated
    componentwise with the same left multiplication.
    """
    q = _as_quat(field)
    acc = None
    for r in range(4):
        dq = QuaternionField(d_real(c, 4 * alpha + r) for c in q.components)
        term = dq.left_mul_unit(r)
        acc = term if acc is None else acc + term
    return acc


def crf_d(field, alpha: int) -> QuaternionField:
    """``d f / d q_alpha = f_0 - f_1 i - f_2 j - f_3 k`` (units on the right)."""
    q = _as_quat(field)
    acc = None
    for r in range(4):
        dq = QuaternionField(d_real(c, 4 * alpha + r) for c in q.components)
        term = dq.right_mul_unit(r)
        if r:
            term = QuaternionField(-c for c in term.components)
        acc = term if acc is None else acc + term
    return acc


def _as_quat(field) -> QuaternionField:
    if isinstance(field, QuaternionField):
        return field
    if not field.real:
        raise ValueError("Cauchy-Riemann-Fueter derivatives need a real field")
    return _scalar_to_quat(field)


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------


def _pad_axis(h: np.ndarray, axis: int, N: int, M: int) -> np.ndarray:
    h = np.moveaxis(h, axis, 0)
    out = np.zeros((M,) + h.shape[1:], dtype=complex)
    half = N // 2
    out[:half] = h[:half]
    out[M - half + 1 :] = h[half + 1 :]
    out[half] += 0.5 * h[half]
    out[M - half] += 0.5 * h[half]
    return np.moveaxis(out, 0, axis)


def _truncate_axis(h: np.ndarray, axis: int, M: int, N: int) -> np.ndarray:
    h = np.moveaxis(h, axis, 0)
    half = N // 2
    out = np.zeros((N,) + h.shape[1:], dtype=complex)
    out[:half] = h[:half]
    out[half + 1 :] = h[M - half + 1 :]
    out[half] = h[half] + h[M - half]
    return np.moveaxis(out, 0, axis)


def dealiased_product(a: PeriodicField, b: PeriodicField) -> PeriodicField:
    """Product evaluated on a 3/2-padded grid and truncated back.

    The padded grid has ``(3N/2)^{4n}`` points, which is only practical for
    ``n = 1`` or very small ``N``.
    """
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")
    g = a.grid
    N = g.N
    M = (3 * N) // 2
    ha, hb = a.hat, b.hat
    for ax in range(g.dim):
        ha = _pad_axis(ha, ax, N, M)
        hb = _pad_axis(hb, ax, N, M)
    prod = _fftn(_ifftn(ha) * _ifftn(hb))
    for ax in range(g.dim):
        prod = _truncate_axis(prod, ax, M, N)
    real = a.real and b.real
    out = PeriodicField(g, hat=prod, real=real)
    return out


# ---------------------------------------------------------------------------
# random band-limited fields
# ---------------------------------------------------------------------------


def random_field(grid: GridSpec, rng: np.random.Generator, kmax: int | None = None,
                 amplitude: float = 1.0, zero_mean: bool = True) -> PeriodicField:
    """Real random trigonometric polynomial with ``|k_a| <= kmax`` on every axis.

    Scaled so that its max norm equals ``amplitude``.
    """
    if kmax is None:
        kmax = grid.N // 2 - 1
    kmax = min(kmax, grid.N // 2 - 1)
    h = _fftn(rng.standard_normal(grid.shape))
    ok = np.abs(_wavenumbers(grid.N)) <= kmax
    mask = np.ones((1,) * grid.dim, dtype=bool)
    for a in range(grid.dim):
        mask = mask & _axis_view(ok, a, grid.dim)
    h = h * mask
    if zero_mean:
        h.flat[0] = 0.0
    v = _ifftn(h).real
    peak = np.max(np.abs(v))
    scale = amplitude / peak if peak > 0 else 1.0
    out = PeriodicField(grid, v * scale)
    out._attach_hat(h * scale)
    return out


# ---------------------------------------------------------------------------
# QMAF binary field files
# ---------------------------------------------------------------------------

MAGIC = b"QMAF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIB")
DTYPE_REAL64, DTYPE_COMPLEX128 = 0, 1


class FieldFormatError(ValueError):
    pass


def write_field(path, field: PeriodicField) -> None:
    """Write ``field`` as a QMAF file (little-endian header + row-major payload)."""
    g = field.grid
    code = DTYPE_REAL64 if field.real else DTYPE_COMPLEX128
    dtype = "<f8" if field.real else "<c16"
    payload = np.ascontiguousarray(field.values, dtype=dtype)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, g.n, g.N, code))
        fh.write(payload.tobytes(order="C"))


def read_field(path) -> PeriodicField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FieldFormatError(f"{path}: file too short for a QMAF header")
    magic, version, n, N, code = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FieldFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FieldFormatError(f"{path}: unsupported QMAF version {version}")
    if code not in (DTYPE_REAL64, DTYPE_COMPLEX128):
        raise FieldFormatError(f"{path}: unknown dtype code {code}")
    grid = GridSpec(int(n), int(N))
    dtype = np.dtype("<f8" if code == DTYPE_REAL64 else "<c16")
    body = data[_HEADER.size :]
    if len(body) != grid.size * dtype.itemsize:
        raise FieldFormatError(
            f"{path}: payload has {len(body)} bytes, expected {grid.size * dtype.itemsize}"
        )
    vals = np.frombuffer(body, dtype=dtype).reshape(grid.shape)
    return PeriodicField(grid, vals.astype(float if code == DTYPE_REAL64 else complex), real=code == DTYPE_REAL64)
