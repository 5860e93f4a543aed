"""Dense linear-algebra primitives: complete SVD bases and orthogonal projectors.

Feature matrices are oriented feature-major, ``Z`` has shape ``(d, N)`` with one
sample per column, so left-singular vectors live in feature space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-8
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class SvdBasis:
    """Complete orthonormal left-singular basis of a feature matrix.

    U: [d, d] orthonormal, columns ordered by descending singular value.
    sigma: [d] non-negative, descending; rank deficiency is padded with zeros.
    """

    U: np.ndarray
    sigma: np.ndarray
    effective_rank: int

    @property
    def d(self) -> int:
        return self.U.shape[0]


def _check_finite(a: np.ndarray, name: str) -> None:
    bad = np.argwhere(~np.isfinite(a))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise ValueError(f"{name} has non-finite entry {a[idx]!r} at index {idx}")


def orthonormal_complete(partial: np.ndarray, seed: int = 0) -> np.ndarray:
    """Extend orthonormal columns ``partial`` [d, r] to a full [d, d] orthonormal matrix.

    The first r columns of the result are exactly the input. Completion vectors are
    seeded random draws orthogonalized (twice) against everything accepted so far.
    """
    partial = np.asarray(partial, dtype=np.float64)
    if partial.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {partial.shape}")
    d, r = partial.shape
    if r > d:
        raise ValueError(f"cannot have {r} orthonormal columns in dimension {d}")
    _check_finite(partial, "partial basis")
    gram = partial.T @ partial
    err = np.max(np.abs(gram - np.eye(r))) if r else 0.0
    if err > ORTHO_TOL:
        raise ValueError(f"input columns are not orthonormal (max |QᵀQ - I| = {err:.3e})")

    out = np.zeros((d, d))
    out[:, :r] = partial
    rng = np.random.default_rng(seed)
    filled = r
    while filled < d:
        v = rng.standard_normal(d)
        for _ in range(2):
            v -= out[:, :filled] @ (out[:, :filled].T @ v)
        norm = np.linalg.norm(v)
        # a draw nearly inside the current span is discarded, not rescaled
        if norm < 1e-6:
            continue
        out[:, filled] = v / norm
        filled += 1
    return out


def svd_complete(features: np.ndarray, seed: int = 0) -> SvdBasis:
    """SVD of a [d, N] feature matrix with U completed to a full d x d basis."""
    Z = np.asarray(features, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
        raise ValueError(f"features must be a non-empty 2-D matrix, got shape {Z.shape}")
    _check_finite(Z, "feature matrix")
    d, n = Z.shape

    U_thin, s, _ = np.linalg.svd(Z, full_matrices=False)
    sigma = np.zeros(d)
    sigma[: s.size] = s
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0

    U = orthonormal_complete(U_thin[:, :rank], seed=seed)
    sigma[rank:] = 0.0
    return SvdBasis(U=U, sigma=sigma, effective_rank=rank)


def reconstruction_error(features: np.ndarray, basis: SvdBasis) -> float:
    """Relative Frobenius error of ``U diag(sigma) Vᵀ`` against ``features``.

    V is recovered from the retained columns as ``V_i = Zᵀ u_i / sigma_i``.
    """
    Z = np.asarray(features, dtype=np.float64)
    r = basis.effective_rank
    Ur = basis.U[:, :r]
    sr = basis.sigma[:r]
    V = (Z.T @ Ur) / sr if r else np.zeros((Z.shape[1], 0))
    approx = (Ur * sr) @ V.T
    return float(np.linalg.norm(approx - Z) / max(1.0, np.linalg.norm(Z)))


def projector_apply(basis_cols: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Return ``B Bᵀ z``. ``z`` may be a vector [d] or a stack of columns [d, N]."""
    B = np.asarray(basis_cols, dtype=np.float64)
    if B.ndim != 2:
        raise ValueError(f"basis must be 2-D, got shape {B.shape}")
    d, r = B.shape
    if r > d:
        raise ValueError(f"basis has {r} columns but dimension is only {d}")
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != d:
        raise ValueError(f"vector dimension {z.shape[0]} does not match basis dimension {d}")
    return B @ (B.T @ z)


def projector_matrix(basis_cols: np.ndarray) -> np.ndarray:
    B = np.asarray(basis_cols, dtype=np.float64)
    return B @ B.T


def is_orthonormal(Q: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    r = Q.shape[1]
    return bool(np.max(np.abs(Q.T @ Q - np.eye(r)), initial=0.0) <= tol)
