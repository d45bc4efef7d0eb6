import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qma.quat import (
    I, J, K, ONE, HyperhermitianMatrix, NotHyperhermitianError, QuatMatrix, Quaternion,
    complex_embed, hyperhermitian_defect, moore_det, moore_det_array, moore_terms, qconj_arrays,
    qmul_arrays,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
quat4 = arrays(np.float64, (4,), elements=finite)


def random_hyperhermitian(rng, n, shift=0.0):
    Q = rng.standard_normal((n, n, 4))
    H = Q + qconj_arrays(np.swapaxes(Q, 0, 1))
    H[np.arange(n), np.arange(n), 0] += shift
    return H


def test_unit_relations():
    assert (I * I).isclose(-ONE) and (J * J).isclose(-ONE) and (K * K).isclose(-ONE)
    assert (I * J * K).isclose(-ONE)
    assert (I * J).isclose(K) and (J * I).isclose(-K)
    assert (J * K).isclose(I) and (K * I).isclose(J)


@given(quat4, quat4, quat4)
def test_product_is_associative(p, q, r):
    lhs = qmul_arrays(qmul_arrays(p, q), r)
    rhs = qmul_arrays(p, qmul_arrays(q, r))
    assert np.allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(lhs).max()))


@given(quat4, quat4)
def test_norm_is_multiplicative_and_conj_reverses(p, q):
    P, Q = Quaternion.from_array(p), Quaternion.from_array(q)
    assert np.isclose((P * Q).norm2(), P.norm2() * Q.norm2(), rtol=1e-9, atol=1e-9)
    assert (P * Q).conj().isclose(Q.conj() * P.conj(), atol=1e-9)


@given(quat4, quat4)
def test_complex_embedding_is_a_homomorphism(p, q):
    P, Q = QuatMatrix(p[None, None]), QuatMatrix(q[None, None])
    PQ = QuatMatrix(qmul_arrays(p, q)[None, None])
    assert np.allclose(complex_embed(P) @ complex_embed(Q), complex_embed(PQ), atol=1e-8)


def test_embedding_block_layout():
    q = Quaternion.from_complex_pair(1 + 2j, 3 - 1j)
    E = complex_embed(QuatMatrix.from_quaternions([[q]]))
    assert np.allclose(E, [[1 + 2j, 3 - 1j], [-(3 + 1j), 1 - 2j]])


def test_moore_terms_count_and_identity_term():
    for n in range(1, 5):
        terms = moore_terms(n)
        assert len(terms) == np.prod(range(1, n + 1))
        signs = [s for s, chain in terms if all(r == c for r, c in chain)]
        assert signs == [1]


def test_moore_two_by_two_closed_form():
    q = Quaternion(0.3, -1.0, 2.0, 0.5)
    H = HyperhermitianMatrix.from_quaternions([[Quaternion(2.0), q], [q.conj(), Quaternion(5.0)]])
    assert np.isclose(moore_det(H), 10.0 - q.norm2())


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_moore_squared_equals_embedding_determinant(rng, n):
    # det of the 2n x 2n complex image is Mdet^2 for hyperhermitian matrices
    for _ in range(10):
        H = random_hyperhermitian(rng, n)
        md = moore_det(HyperhermitianMatrix(H))
        det = np.linalg.det(complex_embed(QuatMatrix(H)))
        assert abs(det.imag) < 1e-9 * max(1, abs(det))
        assert np.isclose(md * md, det.real, rtol=1e-10, atol=1e-10)


def test_moore_of_positive_matrix_is_positive(rng):
    for n in (2, 3):
        H = random_hyperhermitian(rng, n, shift=30.0)
        assert moore_det(HyperhermitianMatrix(H)) > 0


def test_moore_batch_matches_single(rng):
    stack = np.stack([random_hyperhermitian(rng, 3) for _ in range(5)])
    batch = moore_det_array(stack)
    assert np.allclose(batch[:, 1:], 0, atol=1e-10)
    for k in range(5):
        assert np.isclose(batch[k, 0], moore_det(HyperhermitianMatrix(stack[k])))


def test_non_hyperhermitian_rejected(rng):
    Q = rng.standard_normal((2, 2, 4))
    assert hyperhermitian_defect(Q) > 0
    with pytest.raises(NotHyperhermitianError):
        HyperhermitianMatrix(Q)


@settings(max_examples=30)
@given(arrays(np.float64, (2, 2, 4), elements=finite))
def test_moore_invariant_under_unit_conjugation(Q):
    # U H U^* with U a diagonal unit quaternion matrix keeps the Moore determinant
    H = Q + qconj_arrays(np.swapaxes(Q, 0, 1))
    u = np.array([0.5, 0.5, 0.5, 0.5])
    U = np.zeros((2, 2, 4))
    U[0, 0], U[1, 1] = u, u
    Ustar = qconj_arrays(np.swapaxes(U, 0, 1))
    conj = _qmat(_qmat(U, H), Ustar)
    a, b = moore_det(HyperhermitianMatrix(H, atol=1e-9)), moore_det(HyperhermitianMatrix(conj, atol=1e-9))
    assert np.isclose(a, b, rtol=1e-9, atol=1e-8)


def _qmat(A, B):
    n = A.shape[0]
    out = np.zeros((n, n, 4))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                out[i, j] += qmul_arrays(A[i, k], B[k, j])
    return out
