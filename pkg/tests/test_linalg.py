from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esc_unlearn.linalg import (
    is_orthonormal,
    orthonormal_complete,
    projector_apply,
    projector_matrix,
    reconstruction_error,
    svd_complete,
)


def power_iteration(Z, iters=2000, seed=0):
    # independent oracle for the leading left-singular pair
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(Z.shape[0])
    G = Z @ Z.T
    for _ in range(iters):
        v = G @ v
        v /= np.linalg.norm(v)
    return v, np.sqrt(v @ G @ v)


def test_singular_values_match_eigendecomposition():
    rng = np.random.default_rng(3)
    Z = rng.standard_normal((12, 40))
    basis = svd_complete(Z)
    eig = np.sort(np.linalg.eigvalsh(Z @ Z.T))[::-1]
    np.testing.assert_allclose(basis.sigma**2, eig, rtol=1e-10, atol=1e-10)


def test_leading_direction_matches_power_iteration():
    rng = np.random.default_rng(4)
    # spread the spectrum so power iteration converges
    Z = np.diag(np.linspace(5, 1, 8)) @ rng.standard_normal((8, 30))
    basis = svd_complete(Z)
    v, s = power_iteration(Z)
    assert abs(abs(v @ basis.U[:, 0]) - 1.0) < 1e-8
    assert abs(s - basis.sigma[0]) < 1e-8


def test_columns_diagonalize_gram_matrix():
    rng = np.random.default_rng(5)
    Z = rng.standard_normal((6, 20))
    basis = svd_complete(Z)
    D = basis.U.T @ (Z @ Z.T) @ basis.U
    np.testing.assert_allclose(D, np.diag(basis.sigma**2), atol=1e-9)


def test_rank_deficient_basis_is_completed():
    rng = np.random.default_rng(6)
    Z = rng.standard_normal((10, 3)) @ rng.standard_normal((3, 50))
    basis = svd_complete(Z)
    assert basis.effective_rank == 3
    assert basis.U.shape == (10, 10)
    assert is_orthonormal(basis.U)
    assert np.all(basis.sigma[3:] == 0)
    # completion columns are orthogonal to the data
    assert np.max(np.abs(basis.U[:, 3:].T @ Z)) < 1e-8


def test_fewer_samples_than_features():
    Z = np.random.default_rng(1).standard_normal((16, 4))
    basis = svd_complete(Z)
    assert basis.U.shape == (16, 16)
    assert basis.effective_rank == 4
    assert reconstruction_error(Z, basis) < 1e-12


def test_zero_matrix_gives_rank_zero():
    basis = svd_complete(np.zeros((5, 7)))
    assert basis.effective_rank == 0
    assert is_orthonormal(basis.U)
    assert np.all(basis.sigma == 0)


def test_non_finite_input_is_named():
    Z = np.ones((3, 4))
    Z[1, 2] = np.nan
    with pytest.raises(ValueError, match=r"\(1, 2\)"):
        svd_complete(Z)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        svd_complete(np.zeros((3, 0)))


def test_completion_is_seeded_and_keeps_prefix():
    Q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((9, 4)))
    a = orthonormal_complete(Q, seed=11)
    b = orthonormal_complete(Q, seed=11)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a[:, :4], Q)
    assert is_orthonormal(a, 1e-12)


def test_completion_rejects_non_orthonormal_input():
    with pytest.raises(ValueError, match="not orthonormal"):
        orthonormal_complete(np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        orthonormal_complete(np.eye(3, 4))


def test_projector_rejects_too_many_columns():
    with pytest.raises(ValueError):
        projector_apply(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ValueError):
        projector_apply(np.eye(3)[:, :2], np.ones(4))


@settings(max_examples=60, deadline=None)
@given(
    d=st.integers(1, 32),
    n=st.integers(1, 48),
    k=st.integers(0, 32),
    seed=st.integers(0, 2**31 - 1),
)
def test_projector_properties(d, n, k, seed):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((d, n)) * rng.uniform(0.1, 10)
    basis = svd_complete(Z, seed=seed)
    assert np.max(np.abs(basis.U.T @ basis.U - np.eye(d))) <= 1e-8
    assert reconstruction_error(Z, basis) <= 1e-6

    k = min(k, d)
    kept = basis.U[:, k:]
    P = projector_matrix(kept)
    assert np.max(np.abs(P @ P - P)) <= 1e-10
    z = rng.standard_normal(d)
    inside = projector_apply(kept, z)
    outside = projector_apply(basis.U[:, :k], z)
    assert abs(z @ z - inside @ inside - outside @ outside) <= 1e-8 * max(1.0, z @ z)
    np.testing.assert_allclose(inside + outside, z, atol=1e-10)
