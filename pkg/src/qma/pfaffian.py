"""Pfaffians of complex skew-symmetric matrices and log-Pfaffian derivatives.

Sign convention: ``Pf(M) e_1 ^ ... ^ e_2n = (1/n!) (sum_{i<j} m_ij e_i ^ e_j)^n``,
so the standard block form ``sum_i e_{2i} ^ e_{2i+1}`` has Pfaffian ``+1``.
"""

from __future__ import annotations

import numpy as np

from . import kernels

SKEW_ATOL = 1e-12


class SingularMatrixError(ArithmeticError):
    """Raised when a derivative formula needs the inverse of a singular matrix."""


class SkewMatrix:
    """Complex ``2n x 2n`` skew-symmetric matrix stored by its strict upper triangle."""

    __slots__ = ("_upper", "_size")

    def __init__(self, upper, size: int):
        upper = np.array(upper, dtype=complex).ravel()
        if size % 2 or upper.size != size * (size - 1) // 2:
            raise ValueError(f"{upper.size} upper entries do not fit a {size}x{size} skew matrix")
        upper.setflags(write=False)
        self._upper = upper
        self._size = size

    @classmethod
    def from_dense(cls, M, atol: float = SKEW_ATOL) -> "SkewMatrix":
        M = np.asarray(M, dtype=complex)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("expected a square matrix")
        defect = np.max(np.abs(M + M.T)) if M.size else 0.0
        if defect > atol:
            raise ValueError(f"matrix is not skew-symmetric (|M + M^T| = {defect:.3e})")
        return cls(M[np.triu_indices(M.shape[0], 1)], M.shape[0])

    @classmethod
    def standard(cls, n: int) -> "SkewMatrix":
        M = np.zeros((2 * n, 2 * n))
        for i in range(n):
            M[2 * i, 2 * i + 1] = 1.0
            M[2 * i + 1, 2 * i] = -1.0
        return cls.from_dense(M)

    @property
    def n(self) -> int:
        return self._size // 2

    @property
    def size(self) -> int:
        return self._size

    @property
    def upper(self) -> np.ndarray:
        return self._upper

    def dense(self) -> np.ndarray:
        M = np.zeros((self._size, self._size), dtype=complex)
        iu = np.triu_indices(self._size, 1)
        M[iu] = self._upper
        return M - M.T

    def __add__(self, other: "SkewMatrix") -> "SkewMatrix":
        return SkewMatrix(self._upper + other.upper, self._size)

    def __sub__(self, other: "SkewMatrix") -> "SkewMatrix":
        return SkewMatrix(self._upper - other.upper, self._size)

    def __mul__(self, s) -> "SkewMatrix":
        return SkewMatrix(self._upper * s, self._size)

    __rmul__ = __mul__


def _as_dense(M) -> np.ndarray:
    if isinstance(M, SkewMatrix):
        return M.dense()
    return SkewMatrix.from_dense(M).dense()


def pfaffian_expansion(M) -> complex:
    """Pfaffian by recursive expansion along the first row.

    ``Pf(M) = sum_{j>0} (-1)^(j+1) m_0j Pf(M without rows/cols 0, j)``;
    exponential cost, used for ``2n <= 4`` and as a cross-check.
    """
    A = _as_dense(M)
    return _expand(A)


def _expand(A: np.ndarray) -> complex:
    m = A.shape[0]
    if m == 0:
        return 1.0 + 0j
    total = 0j
    for j in range(1, m):
        if A[0, j] == 0:
            continue
        keep = [r for r in range(1, m) if r != j]
        sign = 1.0 if j % 2 == 1 else -1.0
        total += sign * A[0, j] * _expand(A[np.ix_(keep, keep)])
    return total


def pfaffian_parlett_reid(M) -> complex:
    """Pfaffian by skew tridiagonalization with partial pivoting."""
    A = _as_dense(M)
    m = A.shape[0]
    a = A.copy()
    pf = 1.0 + 0j
    for k in range(0, m - 1, 2):
        kp = k + 1 + int(np.argmax(np.abs(a[k + 1 :, k])))
        if kp != k + 1:
            a[[k + 1, kp], k:] = a[[kp, k + 1], k:]
            a[k:, [k + 1, kp]] = a[k:, [kp, k + 1]]
            pf = -pf
        piv = a[k, k + 1]
        if piv == 0:
            return 0j
        pf *= piv
        if k + 2 < m:
            tau = a[k, k + 2 :] / piv
            col = a[k + 2 :, k + 1]
            a[k + 2 :, k + 2 :] += np.outer(tau, col) - np.outer(col, tau)
    return complex(pf)


def pfaffian(M) -> complex:
    """Pfaffian of a skew matrix (``SkewMatrix`` or dense array)."""
    A = _as_dense(M)
    if A.shape[0] <= 4:
        return _expand(A)
    return pfaffian_parlett_reid(A)


def _inverse(A: np.ndarray) -> np.ndarray:
    if pfaffian(A) == 0:
        raise SingularMatrixError("skew matrix is singular (zero Pfaffian)")
    try:
        inv = kernels.inverse_batch(A[None])[0]
    except np.linalg.LinAlgError as exc:  # pragma: no cover - numpy backend only
        raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(inv)):
        raise SingularMatrixError("skew matrix is numerically singular")
    return inv


def pf_log_derivative(M, dM) -> complex:
    """Directional derivative of ``log Pf`` at ``M`` along ``dM``: ``tr(M^-1 dM) / 2``.

    Valid for every nonsingular ``M``; the formula does not need ``Pf(M) > 0``.
    """
    A = _as_dense(M)
    B = _as_dense(dM)
    return 0.5 * complex(np.trace(_inverse(A) @ B))


def pf_log_second_derivative(M, dM_s, dM_t, d2M_st) -> complex:
    """Mixed second derivative of ``log Pf`` for a two-parameter family.

    ``(tr(M^-1 d2M_st) - tr(M^-1 dM_s M^-1 dM_t)) / 2``.
    """
    A = _as_dense(M)
    inv = _inverse(A)
    Bs, Bt, Bst = _as_dense(dM_s), _as_dense(dM_t), _as_dense(d2M_st)
    return 0.5 * complex(np.trace(inv @ Bst) - np.trace(inv @ Bs @ inv @ Bt))
