"""Quaternions, quaternionic matrices and the Moore determinant.

Quaternions are stored as ``(x0, x1, x2, x3)`` for ``x0 + x1 i + x2 j + x3 k``
with ``i^2 = j^2 = k^2 = ijk = -1``.  Matrices are ``(n, n, 4)`` float arrays;
their complex embedding sends ``a + b j`` (``a, b`` complex) to the block
``[[a, b], [-conj(b), conj(a)]]``.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

HERMITIAN_ATOL = 1e-12

_CONJ_SIGNS = np.array([1.0, -1.0, -1.0, -1.0])


def qmul_arrays(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product of quaternion arrays with components on the last axis."""
    a0, a1, a2, a3 = np.moveaxis(np.asarray(p), -1, 0)
    b0, b1, b2, b3 = np.moveaxis(np.asarray(q), -1, 0)
    return np.stack(
        [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        ],
        axis=-1,
    )


def qconj_arrays(q: np.ndarray) -> np.ndarray:
    return np.asarray(q) * _CONJ_SIGNS


@dataclass(frozen=True)
class Quaternion:
    x0: float = 0.0
    x1: float = 0.0
    x2: float = 0.0
    x3: float = 0.0

    @classmethod
    def from_array(cls, a) -> "Quaternion":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @classmethod
    def from_complex_pair(cls, a: complex, b: complex) -> "Quaternion":
        """Build ``a + b j`` from complex ``a`` and ``b``."""
        return cls(a.real, a.imag, b.real, b.imag)

    def to_array(self) -> np.ndarray:
        return np.array([self.x0, self.x1, self.x2, self.x3])

    def complex_pair(self) -> tuple[complex, complex]:
        return complex(self.x0, self.x1), complex(self.x2, self.x3)

    def conj(self) -> "Quaternion":
        return Quaternion(self.x0, -self.x1, -self.x2, -self.x3)

    def norm2(self) -> float:
        return self.x0**2 + self.x1**2 + self.x2**2 + self.x3**2

    def __abs__(self) -> float:
        return float(np.sqrt(self.norm2()))

    def __add__(self, other):
        if isinstance(other, Quaternion):
            return Quaternion.from_array(self.to_array() + other.to_array())
        if isinstance(other, (int, float)):
            return Quaternion(self.x0 + other, self.x1, self.x2, self.x3)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return Quaternion(-self.x0, -self.x1, -self.x2, -self.x3)

    def __sub__(self, other):
        if isinstance(other, (Quaternion, int, float)):
            return self + (-other)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return quat_mul(self, other)
        if isinstance(other, (int, float)):
            return Quaternion.from_array(self.to_array() * other)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return Quaternion.from_array(self.to_array() * other)
        return NotImplemented

    def isclose(self, other: "Quaternion", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.to_array(), other.to_array(), rtol=0, atol=atol))


ONE = Quaternion(1.0)
I = Quaternion(0.0, 1.0)
J = Quaternion(0.0, 0.0, 1.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)
UNITS = (ONE, I, J, K)


def quat_mul(p: Quaternion, q: Quaternion) -> Quaternion:
    return Quaternion.from_array(qmul_arrays(p.to_array(), q.to_array()))


class QuatMatrix:
    """Dense ``n x n`` quaternionic matrix backed by an ``(n, n, 4)`` array."""

    def __init__(self, entries):
        arr = np.array(entries, dtype=float)
        if arr.ndim != 3 or arr.shape[0] != arr.shape[1] or arr.shape[2] != 4:
            raise ValueError(f"expected an (n, n, 4) array, got shape {arr.shape}")
        arr.setflags(write=False)
        self._a = arr

    @classmethod
    def from_quaternions(cls, rows) -> "QuatMatrix":
        return cls([[q.to_array() for q in row] for row in rows])

    @classmethod
    def identity(cls, n: int) -> "QuatMatrix":
        a = np.zeros((n, n, 4))
        a[np.arange(n), np.arange(n), 0] = 1.0
        return cls(a)

    @property
    def n(self) -> int:
        return self._a.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self._a

    def __getitem__(self, idx) -> Quaternion:
        r, c = idx
        return Quaternion.from_array(self._a[r, c])

    def __matmul__(self, other: "QuatMatrix") -> "QuatMatrix":
        # (AB)_ik = sum_j A_ij B_jk with non-commuting entries
        prod = qmul_arrays(self._a[:, :, None, :], other.array[None, :, :, :])
        return QuatMatrix(prod.sum(axis=1))

    def __add__(self, other: "QuatMatrix") -> "QuatMatrix":
        return QuatMatrix(self._a + other.array)

    def __mul__(self, s: float) -> "QuatMatrix":
        return QuatMatrix(self._a * s)

    __rmul__ = __mul__

    def conj_transpose(self) -> "QuatMatrix":
        return QuatMatrix(qconj_arrays(self._a).transpose(1, 0, 2))

    def complex_embed(self) -> np.ndarray:
        return complex_embed(self)


def complex_embed(A: QuatMatrix) -> np.ndarray:
    """The ``2n x 2n`` complex matrix of ``A``; an algebra homomorphism."""
    a = A.array
    alpha = a[..., 0] + 1j * a[..., 1]
    beta = a[..., 2] + 1j * a[..., 3]
    n = A.n
    out = np.empty((2 * n, 2 * n), dtype=complex)
    out[0::2, 0::2] = alpha
    out[0::2, 1::2] = beta
    out[1::2, 0::2] = -beta.conj()
    out[1::2, 1::2] = alpha.conj()
    return out


class NotHyperhermitianError(ValueError):
    pass


def hyperhermitian_defect(a: np.ndarray) -> float:
    """Largest entry of ``A - A^*`` for an ``(..., n, n, 4)`` array."""
    star = qconj_arrays(np.swapaxes(a, -3, -2))
    return float(np.max(np.abs(a - star))) if a.size else 0.0


class HyperhermitianMatrix(QuatMatrix):
    """Quaternionic matrix equal to its conjugate transpose."""

    def __init__(self, entries, atol: float = HERMITIAN_ATOL):
        super().__init__(entries)
        defect = hyperhermitian_defect(self.array)
        if defect > atol:
            raise NotHyperhermitianError(
                f"matrix is not hyperhermitian (defect {defect:.3e} > {atol:.1e})"
            )

    def moore_det(self) -> float:
        return moore_det(self)


@functools.lru_cache(maxsize=None)
def moore_terms(n: int) -> tuple[tuple[int, tuple[tuple[int, int], ...]], ...]:
    """Signed ordered index chains of the Moore determinant of size ``n``.

    Every permutation is split into disjoint cycles; each cycle is written
    starting from its smallest element and the cycles are ordered by
    decreasing smallest element.  A term is the product of the entries
    ``a[c0, c1] a[c1, c2] ... a[cl, c0]`` taken cycle by cycle in that order.
    """
    terms = []
    for perm in itertools.permutations(range(n)):
        seen = [False] * n
        cycles = []
        for start in range(n):
            if seen[start]:
                continue
            cyc = []
            k = start
            while not seen[k]:
                seen[k] = True
                cyc.append(k)
                k = perm[k]
            cycles.append(cyc)  # start is the smallest unseen index, hence min
        cycles.sort(key=lambda c: -c[0])
        sign = (-1) ** (n - len(cycles))
        chain = []
        for cyc in cycles:
            for pos, r in enumerate(cyc):
                chain.append((r, cyc[(pos + 1) % len(cyc)]))
        terms.append((sign, tuple(chain)))
    return tuple(terms)


def moore_det_array(a: np.ndarray) -> np.ndarray:
    """Moore determinant for a stack of ``(..., n, n, 4)`` quaternion matrices.

    Returns the full quaternion value of the cycle expansion (``(..., 4)``);
    for hyperhermitian input only the real component survives.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-2]
    total = np.zeros(a.shape[:-3] + (4,))
    for sign, chain in moore_terms(n):
        prod = a[..., chain[0][0], chain[0][1], :]
        for r, c in chain[1:]:
            prod = qmul_arrays(prod, a[..., r, c, :])
        total = total + sign * prod
    return total


def moore_det(A: QuatMatrix) -> float:
    if not isinstance(A, HyperhermitianMatrix):
        A = HyperhermitianMatrix(A.array)
    val = moore_det_array(A.array)
    return float(val[0])
