import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qma.pfaffian import (
    SingularMatrixError, SkewMatrix, pf_log_derivative, pf_log_second_derivative, pfaffian,
    pfaffian_expansion, pfaffian_parlett_reid,
)


def matching_pfaffian(A):
    """Sum over perfect matchings with the sign of the matching permutation."""
    m = A.shape[0]

    def matchings(items):
        if not items:
            yield []
            return
        a = items[0]
        for k in range(1, len(items)):
            rest = items[1:k] + items[k + 1 :]
            for tail in matchings(rest):
                yield [(a, items[k])] + tail

    total = 0j
    for mt in matchings(list(range(m))):
        perm = [x for pair in mt for x in pair]
        inversions = sum(1 for i, j in itertools.combinations(range(m), 2) if perm[i] > perm[j])
        total += (-1) ** inversions * np.prod([A[i, j] for i, j in mt])
    return total


def random_skew(rng, m):
    A = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return A - A.T


@pytest.mark.parametrize("m", [2, 4, 6, 8])
def test_against_matching_oracle(rng, m):
    for _ in range(5):
        A = random_skew(rng, m)
        ref = matching_pfaffian(A)
        for fn in (pfaffian, pfaffian_expansion, pfaffian_parlett_reid):
            assert abs(fn(A) - ref) <= 1e-11 * max(1.0, abs(ref))


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_standard_form_has_pfaffian_one(n):
    S = SkewMatrix.standard(n)
    assert pfaffian(S) == 1.0
    assert pfaffian_parlett_reid(S) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_square_is_determinant(n, seed):
    A = random_skew(np.random.default_rng(seed), 2 * n)
    p = pfaffian(A)
    det = np.linalg.det(A)
    assert abs(p * p - det) <= 1e-10 * abs(det)


def test_congruence_rule(rng):
    # Pf(B A B^T) = det(B) Pf(A)
    for m in (4, 6):
        A = random_skew(rng, m)
        B = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
        lhs = pfaffian(B @ A @ B.T)
        rhs = np.linalg.det(B) * pfaffian(A)
        assert abs(lhs - rhs) <= 1e-10 * abs(rhs)


def test_row_swap_flips_sign(rng):
    A = random_skew(rng, 6)
    P = np.eye(6)[[1, 0, 2, 3, 4, 5]]
    assert np.isclose(pfaffian(P @ A @ P.T), -pfaffian(A))


def test_singular_has_zero_pfaffian():
    A = np.zeros((4, 4), dtype=complex)
    A[0, 1], A[1, 0] = 1, -1
    assert pfaffian(A) == 0
    assert pfaffian_parlett_reid(A) == 0


def test_skew_matrix_validation():
    with pytest.raises(ValueError):
        SkewMatrix.from_dense(np.ones((2, 2)))
    with pytest.raises(ValueError):
        SkewMatrix(np.zeros(3), 3)
    S = SkewMatrix.from_dense(SkewMatrix.standard(2).dense() * 2)
    assert S.n == 2 and pfaffian(S) == 4


def _family(rng, m):
    A = SkewMatrix.standard(m // 2).dense() * 2 + 0.3 * random_skew(rng, m)
    B, C, D = (random_skew(rng, m) for _ in range(3))
    return lambda s, t: A + s * B + t * C + s * t * D, B, C, D


def test_log_derivative_matches_finite_difference(rng):
    for _ in range(10):
        M, B, C, D = _family(rng, 6)
        h = 1e-5
        fd = (np.log(pfaffian(M(h, 0)) / pfaffian(M(-h, 0)))) / (2 * h)
        assert abs(pf_log_derivative(M(0, 0), B) - fd) < 1e-7


def test_log_second_derivative_matches_finite_difference(rng):
    for _ in range(10):
        M, B, C, D = _family(rng, 6)
        h = 1e-4
        lp = lambda s, t: np.log(pfaffian(M(s, t)) / pfaffian(M(0, 0)))  # noqa: E731
        fd = (lp(h, h) - lp(h, -h) - lp(-h, h) + lp(-h, -h)) / (4 * h * h)
        assert abs(pf_log_second_derivative(M(0, 0), B, C, D) - fd) < 1e-5


def test_derivative_of_singular_raises():
    Z = np.zeros((4, 4))
    with pytest.raises(SingularMatrixError):
        pf_log_derivative(Z, Z)
