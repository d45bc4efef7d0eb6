"""Per-grid-point small-matrix kernels.

Each public kernel takes a batch of tiny matrices (leading axis = grid points)
and dispatches to a numba loop or to a vectorized numpy implementation.  The
two paths share no code, so the test-suite checks them against each other.

Backend selection: :func:`set_backend` or the ``QMA_DISABLE_NUMBA`` variable
(see :mod:`qma._accel`).
"""

from __future__ import annotations

import numpy as np

from . import _accel
from .quat import moore_det_array, moore_terms

_backend = _accel.default_backend()

CHUNK = 1 << 16


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _accel.HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


# ---------------------------------------------------------------------------
# numba loops
# ---------------------------------------------------------------------------


@_accel.njit
def _pf_single(A):
    m = A.shape[0]
    if m % 2 == 1:
        return 0.0 + 0.0j
    if m == 2:
        return A[0, 1]
    if m == 4:
        return A[0, 1] * A[2, 3] - A[0, 2] * A[1, 3] + A[0, 3] * A[1, 2]
    a = A.copy()
    pf = 1.0 + 0.0j
    for k in range(0, m - 1, 2):
        kp = k + 1
        best = abs(a[k + 1, k])
        for r in range(k + 2, m):
            v = abs(a[r, k])
            if v > best:
                best = v
                kp = r
        if kp != k + 1:
            for c in range(k, m):
                tmp = a[k + 1, c]
                a[k + 1, c] = a[kp, c]
                a[kp, c] = tmp
            for r in range(k, m):
                tmp = a[r, k + 1]
                a[r, k + 1] = a[r, kp]
                a[r, kp] = tmp
            pf = -pf
        piv = a[k, k + 1]
        if piv == 0:
            return 0.0 + 0.0j
        pf *= piv
        for r in range(k + 2, m):
            tau_r = a[k, r] / piv
            for c in range(k + 2, m):
                tau_c = a[k, c] / piv
                a[r, c] += tau_r * a[c, k + 1] - a[r, k + 1] * tau_c
    return pf


@_accel.njit
def _pfaffian_loop(A):
    out = np.empty(A.shape[0], dtype=np.complex128)
    for p in range(A.shape[0]):
        out[p] = _pf_single(A[p])
    return out


@_accel.njit
def _inverse_loop(A):
    P, m, _ = A.shape
    out = np.empty_like(A)
    for p in range(P):
        a = A[p].copy()
        x = np.eye(m).astype(np.complex128)
        for k in range(m):
            piv = k
            best = abs(a[k, k])
            for r in range(k + 1, m):
                if abs(a[r, k]) > best:
                    best = abs(a[r, k])
                    piv = r
            if piv != k:
                for c in range(m):
                    t = a[k, c]
                    a[k, c] = a[piv, c]
                    a[piv, c] = t
                    t = x[k, c]
                    x[k, c] = x[piv, c]
                    x[piv, c] = t
            d = a[k, k]
            for r in range(k + 1, m):
                f = a[r, k] / d
                if f != 0:
                    for c in range(k, m):
                        a[r, c] -= f * a[k, c]
                    for c in range(m):
                        x[r, c] -= f * x[k, c]
        for k in range(m - 1, -1, -1):
            for c in range(m):
                s = x[k, c]
                for j in range(k + 1, m):
                    s -= a[k, j] * x[j, c]
                x[k, c] = s / a[k, k]
        out[p] = x
    return out


@_accel.njit
def _moore_loop(H, signs, chains):
    P = H.shape[0]
    T, L, _ = chains.shape
    out = np.empty(P)
    for p in range(P):
        acc = 0.0
        for t in range(T):
            r0 = chains[t, 0, 0]
            c0 = chains[t, 0, 1]
            w0 = H[p, r0, c0, 0]
            w1 = H[p, r0, c0, 1]
            w2 = H[p, r0, c0, 2]
            w3 = H[p, r0, c0, 3]
            for l in range(1, L):
                r = chains[t, l, 0]
                c = chains[t, l, 1]
                b0 = H[p, r, c, 0]
                b1 = H[p, r, c, 1]
                b2 = H[p, r, c, 2]
                b3 = H[p, r, c, 3]
                n0 = w0 * b0 - w1 * b1 - w2 * b2 - w3 * b3
                n1 = w0 * b1 + w1 * b0 + w2 * b3 - w3 * b2
                n2 = w0 * b2 - w1 * b3 + w2 * b0 + w3 * b1
                n3 = w0 * b3 + w1 * b2 - w2 * b1 + w3 * b0
                w0, w1, w2, w3 = n0, n1, n2, n3
            acc += signs[t] * w0
        out[p] = acc
    return out


# ---------------------------------------------------------------------------
# vectorized numpy
# ---------------------------------------------------------------------------


def _pfaffian_vec(A):
    m = A.shape[-1]
    if m % 2:
        return np.zeros(A.shape[0], dtype=complex)
    if m == 2:
        return A[:, 0, 1].astype(complex)
    if m == 4:
        return (
            A[:, 0, 1] * A[:, 2, 3]
            - A[:, 0, 2] * A[:, 1, 3]
            + A[:, 0, 3] * A[:, 1, 2]
        ).astype(complex)
    a = np.array(A, dtype=complex)
    P = a.shape[0]
    rows = np.arange(P)
    pf = np.ones(P, dtype=complex)
    for k in range(0, m - 1, 2):
        kp = k + 1 + np.argmax(np.abs(a[:, k + 1 :, k]), axis=1)
        swap = kp != k + 1
        if swap.any():
            perm = np.tile(np.arange(m), (P, 1))
            perm[rows, k + 1] = kp
            perm[rows, kp] = k + 1
            a = a[rows[:, None, None], perm[:, :, None], perm[:, None, :]]
            pf[swap] = -pf[swap]
        piv = a[:, k, k + 1]
        dead = piv == 0
        pf = np.where(dead, 0.0, pf * piv)
        if k + 2 < m:
            safe = np.where(dead, 1.0, piv)
            tau = a[:, k, k + 2 :] / safe[:, None]
            col = a[:, k + 2 :, k + 1]
            a[:, k + 2 :, k + 2 :] += (
                tau[:, :, None] * col[:, None, :] - col[:, :, None] * tau[:, None, :]
            )
    return pf


def _moore_vec(H):
    return moore_det_array(H)[..., 0]


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _chunked(fn, arrays, chunk=CHUNK):
    P = arrays[0].shape[0]
    out = None
    for s in range(0, P, chunk):
        part = fn(*[a[s : s + chunk] for a in arrays])
        if out is None:
            out = np.empty((P,) + part.shape[1:], dtype=part.dtype)
        out[s : s + chunk] = part
    return out


def pfaffian_batch(A: np.ndarray) -> np.ndarray:
    """Pfaffians of a ``(P, 2n, 2n)`` stack of skew matrices."""
    A = np.ascontiguousarray(A, dtype=complex)
    if _backend == "numba":
        return _chunked(_pfaffian_loop, [A])
    return _chunked(_pfaffian_vec, [A])


def inverse_batch(A: np.ndarray) -> np.ndarray:
    """Inverses by LU with partial pivoting, ``(P, m, m) -> (P, m, m)``."""
    A = np.ascontiguousarray(A, dtype=complex)
    if _backend == "numba":
        return _chunked(_inverse_loop, [A])
    return _chunked(np.linalg.inv, [A])


def moore_det_batch(H: np.ndarray) -> np.ndarray:
    """Real Moore determinants of a ``(P, n, n, 4)`` stack."""
    H = np.ascontiguousarray(H, dtype=float)
    n = H.shape[1]
    if _backend == "numba":
        terms = moore_terms(n)
        signs = np.array([s for s, _ in terms], dtype=float)
        chains = np.array([c for _, c in terms], dtype=np.int64)
        return _chunked(lambda h: _moore_loop(h, signs, chains), [H])
    return _chunked(_moore_vec, [H])


def hermitian_min_eig_batch(Hm: np.ndarray, quaternionic: bool = False) -> np.ndarray:
    """Smallest eigenvalue of each Hermitian matrix in a ``(P, m, m)`` stack.

    With ``quaternionic=True`` and ``m == 4`` the eigenvalues are assumed to
    come in equal pairs (complex image of a 2x2 hyperhermitian matrix), which
    gives a closed form in terms of ``tr H`` and ``tr H^2``.
    """
    m = Hm.shape[-1]
    if m == 2:
        a = Hm[:, 0, 0].real
        d = Hm[:, 1, 1].real
        b2 = np.abs(Hm[:, 0, 1]) ** 2
        return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b2)
    if m == 4 and quaternionic:
        tr = np.einsum("pii->p", Hm).real
        tr2 = np.einsum("pij,pji->p", Hm, Hm).real
        gap2 = np.maximum(tr2 - 0.25 * tr * tr, 0.0)
        return 0.5 * (0.5 * tr - np.sqrt(gap2))
    return _chunked(lambda h: np.linalg.eigvalsh(h)[:, 0], [Hm], chunk=CHUNK // 4)


def symmetric_max_eig_batch(S: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of each real symmetric matrix in ``(P, d, d)``."""
    return _chunked(lambda s: np.linalg.eigvalsh(s)[:, -1], [S], chunk=CHUNK // 4)
