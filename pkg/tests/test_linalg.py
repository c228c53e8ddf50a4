import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import best_subset_residual, gram_schmidt_qr
from qrprune.errors import NumericError, ShapeError
from qrprune.linalg import (
    find_representative_rows,
    least_squares_row,
    pseudo_inverse,
    qr_column_pivot,
    row_residual,
    svd,
)


def test_svd_diagonal():
    assert np.allclose(svd(np.eye(3)).singular_values, [1, 1, 1])
    assert np.allclose(svd(np.diag([3.0, 2.0, 1.0])).singular_values, [3, 2, 1])


def test_svd_matches_gram_eigenvalues(rng):
    M = rng.standard_normal((6, 40))
    s = svd(M).singular_values
    oracle = np.sqrt(np.sort(np.linalg.eigvalsh(M @ M.T))[::-1])
    assert np.allclose(s, oracle, rtol=1e-8, atol=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_svd_invariants(m, n, seed):
    M = np.random.default_rng(seed).standard_normal((m, n))
    U, s, Vt = svd(M)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
    assert np.abs((U * s) @ Vt - M).max() <= 1e-8 * s[0]
    r = min(m, n)
    assert np.abs(U.T @ U - np.eye(r)).max() <= 1e-10
    assert np.abs(Vt @ Vt.T - np.eye(r)).max() <= 1e-10


def test_svd_rejects_nan():
    with pytest.raises(NumericError):
        svd([[1.0, np.nan]])


def test_qrcp_forced_pivot():
    assert qr_column_pivot([[0.0, 5.0], [0.0, 0.0]]).perm.tolist() == [1, 0]


def test_qrcp_orthogonal(rng):
    Q0, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    R = qr_column_pivot(Q0).R
    assert np.allclose(np.abs(np.diag(R)), 1.0, atol=1e-10)


def test_qrcp_against_gram_schmidt(rng):
    M = rng.standard_normal((4, 10))
    Q, R, perm = qr_column_pivot(M)
    assert np.abs(Q @ R - M[:, perm]).max() <= 1e-10
    # the leading 4 pivoted columns are independent; Gram-Schmidt on them
    # must give the same triangle up to column signs
    Qg, Rg = gram_schmidt_qr(M[:, perm[:4]])
    signs = np.sign(np.diag(R[:, :4]))
    assert np.allclose(Q * signs, Qg, atol=1e-10)
    assert np.allclose(R[:, :4] * signs[:, None], Rg, atol=1e-10)


def test_qrcp_pivot_rule_largest_residual(rng):
    M = rng.standard_normal((5, 8))
    Q, R, perm = qr_column_pivot(M)
    for k in range(5):
        resid = M[:, perm[k:]] - Q[:, :k] @ (Q[:, :k].T @ M[:, perm[k:]])
        norms = np.linalg.norm(resid, axis=0)
        assert norms[0] >= norms.max() - 1e-12


def test_qrcp_ties_lowest_index():
    assert qr_column_pivot(np.eye(3)).perm.tolist() == [0, 1, 2]
    assert qr_column_pivot(np.zeros((2, 4))).perm.tolist() == [0, 1, 2, 3]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_qrcp_invariants(m, n, seed):
    M = np.random.default_rng(seed).standard_normal((m, n))
    Q, R, perm = qr_column_pivot(M)
    assert sorted(perm.tolist()) == list(range(n))
    assert np.abs(Q @ R - M[:, perm]).max() <= 1e-8 * np.abs(M).max()
    assert np.abs(Q.T @ Q - np.eye(min(m, n))).max() <= 1e-10
    d = np.abs(np.diag(R))
    assert np.all(d[1:] <= d[:-1] + 1e-12)


def test_pinv_diag():
    assert np.allclose(pseudo_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))


def test_pinv_involution(rng):
    M = rng.standard_normal((4, 7))
    assert np.abs(pseudo_inverse(pseudo_inverse(M)) - M).max() <= 1e-8


def test_pinv_rank_one_closed_form(rng):
    u, v = rng.standard_normal(5), rng.standard_normal(3)
    expected = np.outer(v, u) / (u @ u * (v @ v))
    assert np.abs(pseudo_inverse(np.outer(u, v)) - expected).max() <= 1e-10


def test_pinv_zero_matrix():
    P = pseudo_inverse(np.zeros((2, 3)))
    assert P.shape == (3, 2) and not P.any()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_pinv_moore_penrose(m, n, seed):
    M = np.random.default_rng(seed).standard_normal((m, n))
    P = pseudo_inverse(M)
    assert np.abs(M @ P @ M - M).max() <= 1e-8
    assert np.abs(P @ M @ P - P).max() <= 1e-8
    assert np.abs((M @ P).T - M @ P).max() <= 1e-8
    assert np.abs((P @ M).T - P @ M).max() <= 1e-8


def test_representative_rows_exact_dependence():
    A = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]])
    kept = find_representative_rows(A, 2)
    excluded = (set(range(3)) - set(kept.tolist())).pop()
    coef = least_squares_row(A[[excluded]], A[kept])
    assert np.linalg.norm(A[excluded] - coef @ A[kept]) <= 1e-10


def test_representative_rows_all(rng):
    A = rng.standard_normal((5, 9))
    assert sorted(find_representative_rows(A, 5).tolist()) == list(range(5))


def test_representative_rows_keep_range(rng):
    A = rng.standard_normal((4, 9))
    for bad in (0, 5):
        with pytest.raises(ValueError):
            find_representative_rows(A, bad)


def test_representative_rows_keep_above_rank(rng):
    A = np.outer(rng.standard_normal(5), rng.standard_normal(12))
    kept = find_representative_rows(A, 4)
    assert len(set(kept.tolist())) == 4


def test_representative_rows_wide_basis_when_n_small(rng):
    # fewer samples than rows: U must be the full square basis
    A = rng.standard_normal((6, 3))
    kept = find_representative_rows(A, 5)
    assert len(set(kept.tolist())) == 5


def _planted_rank3(rng):
    return rng.standard_normal((6, 3)) @ rng.standard_normal((3, 40))


def test_representative_rows_vs_exhaustive_rank3():
    for seed in range(200):
        A = _planted_rank3(np.random.default_rng(seed))
        B = A.sum(axis=0, keepdims=True)
        kept = find_representative_rows(A, 3)
        s = least_squares_row(B, A[kept])
        resid = np.linalg.norm(B - s @ A[kept])
        best, _, _ = best_subset_residual(A, B, 3)
        assert np.isfinite(resid)
        assert resid <= 1e-6 * np.linalg.norm(A)
        assert resid <= best + 1e-8 * np.linalg.norm(B)


def test_representative_rows_full_rank_bounded_by_worst_subset():
    for seed in range(200):
        A = np.random.default_rng(1000 + seed).standard_normal((6, 40))
        B = A.sum(axis=0, keepdims=True)
        kept = find_representative_rows(A, 3)
        resid = np.linalg.norm(B - least_squares_row(B, A[kept]) @ A[kept])
        best, worst, _ = best_subset_residual(A, B, 3)
        assert np.isfinite(resid) and best - 1e-9 <= resid <= worst + 1e-9


def test_least_squares_row_basics(rng):
    A = rng.standard_normal((3, 50))
    assert np.allclose(least_squares_row(A[[0]], A), [1, 0, 0], atol=1e-8)
    assert np.allclose(least_squares_row(A[[1]], A[[1]]), [1.0])
    coef = np.array([2.0, -1.0, 0.5])
    assert np.abs(least_squares_row(coef[None] @ A, A) - coef).max() <= 1e-8
    with pytest.raises(ShapeError):
        least_squares_row(np.ones((1, 4)), np.ones((2, 5)))


def test_least_squares_is_minimizer(rng):
    A = rng.standard_normal((4, 30))
    B = rng.standard_normal((1, 30))
    s = least_squares_row(B, A)
    base = row_residual(B, A, s)
    for _ in range(20):
        assert row_residual(B, A, s + 1e-3 * rng.standard_normal(4)) >= base


def test_residual_nonincreasing_in_keep():
    """Larger keep uses a larger singular basis; the picks need not be nested,
    so occasional increases are flagged (not failed) as long as they stay
    rare.  Nested picks can never increase the least-squares residual."""
    flagged, steps = [], 0
    for seed in range(200):
        A = np.random.default_rng(seed).standard_normal((6, 40))
        B = A.sum(axis=0, keepdims=True)
        prev_r, prev_set = np.inf, set()
        for k in range(1, 7):
            kept = find_representative_rows(A, k)
            r = row_residual(B, A[kept], least_squares_row(B, A[kept]))
            steps += 1
            if r > prev_r + 1e-8:
                assert not prev_set <= set(kept.tolist())
                flagged.append((seed, k, prev_r, r))
            prev_r, prev_set = r, set(kept.tolist())
    if flagged:
        warnings.warn(f"residual rose with keep in {len(flagged)}/{steps} steps: {flagged}")
    assert len(flagged) <= 0.01 * steps


def test_exact_rank_reconstruction(rng):
    A = rng.standard_normal((8, 4)) @ rng.standard_normal((4, 60))
    for keep in (4, 5, 8):
        kept = find_representative_rows(A, keep)
        for row in set(range(8)) - set(kept.tolist()):
            s = least_squares_row(A[[row]], A[kept])
            assert np.linalg.norm(A[row] - s @ A[kept]) <= 1e-6 * np.linalg.norm(A)


def test_deterministic(rng):
    A = rng.standard_normal((7, 30))
    a = find_representative_rows(A, 4)
    b = find_representative_rows(A.copy(), 4)
    assert a.tobytes() == b.tobytes()
