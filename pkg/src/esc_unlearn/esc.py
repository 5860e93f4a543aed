"""Training-free erasure: prune the leading principal directions of forget features.

The unlearned extractor is ``z -> U_P U_Pᵀ z`` where ``U_P`` drops the first ``k``
left-singular vectors of the forget-set feature matrix. Model parameters are never
touched; the erasure lives in a separate transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import svd_complete
from .model import MlpModel, atomic_write, dump_json_exact, forward_features

SIDECAR_VERSION = 1


@dataclass
class EscConfig:
    p: float = 3.0
    center: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p < 100.0:
            raise ValueError(f"p must be in [0, 100), got {self.p}")


@dataclass(frozen=True)
class FeatureTransform:
    """A linear map on feature vectors, ``z -> matrix @ z``."""

    matrix: np.ndarray
    kind: str = "linear"

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    def apply(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[0] != self.d:
            raise ValueError(f"vector dimension {z.shape[0]} does not match transform dimension {self.d}")
        return self.matrix @ z

    @staticmethod
    def identity(d: int) -> "FeatureTransform":
        return FeatureTransform(np.eye(d), kind="identity")


@dataclass(frozen=True)
class PrunedBasis:
    U: np.ndarray
    k: int

    @property
    def d(self) -> int:
        return self.U.shape[0]

    @property
    def U_P(self) -> np.ndarray:
        return self.U[:, self.k :]

    @property
    def matrix(self) -> np.ndarray:
        return self.U_P @ self.U_P.T

    def transform(self) -> FeatureTransform:
        return FeatureTransform(self.matrix, kind="esc")


def compute_k(p: float, d: int) -> int:
    """Number of pruned directions: ``round(d * p / 100)`` (half-to-even), at least 1 when p > 0."""
    if not 0.0 <= p < 100.0:
        raise ValueError(f"p must be in [0, 100), got {p}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if p == 0:
        return 0
    k = max(1, int(round(d * p / 100.0)))
    return min(k, d - 1) if d > 1 else k


def esc_fit_features(Z_f: np.ndarray, cfg: EscConfig) -> PrunedBasis:
    """Pruned basis from a feature-major forget feature matrix ``[d, N]``."""
    Z = np.asarray(Z_f, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] == 0:
        raise ValueError("forget features must be a non-empty [d, N] matrix")
    if cfg.center:
        Z = Z - Z.mean(axis=1, keepdims=True)
    basis = svd_complete(Z, seed=cfg.seed)
    return PrunedBasis(U=basis.U, k=compute_k(cfg.p, Z.shape[0]))


def esc_fit(model: MlpModel, forget_inputs: np.ndarray, cfg: EscConfig | None = None) -> PrunedBasis:
    cfg = cfg or EscConfig()
    forget_inputs = np.asarray(forget_inputs, dtype=np.float64)
    if forget_inputs.ndim != 2 or forget_inputs.shape[0] == 0:
        raise ValueError("forget_inputs must be non-empty")
    return esc_fit_features(forward_features(model, forget_inputs), cfg)


def esc_fit_after(
    model: MlpModel, prior, forget_inputs: np.ndarray, cfg: EscConfig | None = None
) -> tuple[PrunedBasis, FeatureTransform]:
    """Incremental step: fit on features already passed through ``prior``.

    Returns the new basis and the merged transform (``prior`` first, then the new one).
    """
    cfg = cfg or EscConfig()
    prior = _as_transform(prior)
    if prior.d != model.feature_dim:
        raise ValueError(f"prior transform has dimension {prior.d}, model features have {model.feature_dim}")
    Z = prior.matrix @ forward_features(model, np.asarray(forget_inputs, dtype=np.float64))
    basis = esc_fit_features(Z, cfg)
    return basis, merge_projectors(prior, basis)


def esc_apply(basis: PrunedBasis, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != basis.d:
        raise ValueError(f"vector dimension {z.shape[0]} does not match basis dimension {basis.d}")
    U_P = basis.U_P
    return U_P @ (U_P.T @ z)


def _as_transform(t) -> FeatureTransform:
    if isinstance(t, FeatureTransform):
        return t
    if hasattr(t, "transform"):
        return t.transform()
    return FeatureTransform(np.asarray(t, dtype=np.float64))


def merge_projectors(first, second) -> FeatureTransform:
    """Composite transform equal to applying ``first`` then ``second``."""
    a, b = _as_transform(first), _as_transform(second)
    if a.d != b.d:
        raise ValueError(f"cannot merge transforms over dimensions {a.d} and {b.d}")
    return FeatureTransform(b.matrix @ a.matrix, kind="merged")


# --- sidecar I/O ----------------------------------------------------------------


def save_esc_sidecar(basis: PrunedBasis, path: str | Path) -> None:
    doc = {
        "version": SIDECAR_VERSION,
        "kind": "esc",
        "d": basis.d,
        "k": basis.k,
        "basis": basis.U_P,
        "basis_u": basis.U,
    }
    atomic_write(path, dump_json_exact(doc))


def load_sidecar(path: str | Path) -> FeatureTransform:
    """Load an erasure transform sidecar of any supported kind."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: corrupt sidecar ({exc})") from None
    if doc.get("version") != SIDECAR_VERSION:
        raise ValueError(f"{path}: version: expected {SIDECAR_VERSION}, got {doc.get('version')!r}")
    kind = doc.get("kind")
    d = doc.get("d")
    if kind == "esc":
        B = np.array(doc["basis"], dtype=np.float64).reshape(d, -1)
        return FeatureTransform(B @ B.T, kind="esc")
    if kind == "esc-t":
        from .esc_t import RefinedBasis

        U = np.array(doc["basis_u"], dtype=np.float64)
        M = np.array(doc["mask"], dtype=np.float64)
        if U.shape != (d, d) or M.shape != (d, d):
            raise ValueError(f"{path}: basis_u/mask must be {d}x{d}")
        return RefinedBasis(U=U, M_R=M).transform()
    if kind == "merged":
        return FeatureTransform(np.array(doc["matrix"], dtype=np.float64).reshape(d, d), kind="merged")
    raise ValueError(f"{path}: kind: unknown sidecar kind {kind!r}")


def save_transform(t: FeatureTransform, path: str | Path) -> None:
    doc = {"version": SIDECAR_VERSION, "kind": "merged", "d": t.d, "matrix": t.matrix}
    atomic_write(path, dump_json_exact(doc))
