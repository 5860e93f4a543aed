"""Erasure with a learned element-wise mask over the principal directions.

A mask ``M`` (same shape as ``U``) is trained so that the masked projector
``A Aᵀ`` with ``A = U * M`` drives forget samples to misclassification. The loss is
the negated cross-entropy on samples the masked model still gets right and zero
otherwise. After training, ``M`` is binarized at ``tau``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import LabeledSet
from .esc import SIDECAR_VERSION, FeatureTransform
from .linalg import svd_complete
from .model import MlpModel, atomic_write, dump_json_exact, forward_features, log_softmax

logger = logging.getLogger(__name__)


@dataclass
class EscTConfig:
    epochs: int = 50
    learning_rate: float = 1.0
    tau: float = 0.75
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class MaskState:
    M: np.ndarray
    binarized: bool = False
    M_R: np.ndarray | None = None
    epochs_run: int = 0
    steps: int = 0
    stopped_early: bool = False
    history: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class RefinedBasis:
    U: np.ndarray
    M_R: np.ndarray

    @property
    def d(self) -> int:
        return self.U.shape[0]

    @property
    def U_R(self) -> np.ndarray:
        return self.U * self.M_R

    @property
    def matrix(self) -> np.ndarray:
        U_R = self.U_R
        return U_R @ U_R.T

    def transform(self) -> FeatureTransform:
        return FeatureTransform(self.matrix, kind="esc-t")


def pce_loss(logits: np.ndarray, label: int) -> float:
    """Negated cross-entropy when ``argmax(logits) == label`` (lowest index wins ties), else 0."""
    logits = np.asarray(logits, dtype=np.float64)
    if int(np.argmax(logits)) != int(label):
        return 0.0
    return float(log_softmax(logits)[label])


def _masked_logits(model: MlpModel, A: np.ndarray, Z: np.ndarray) -> np.ndarray:
    # Z: [N, d] rows -> logits [N, C]
    Y = (Z @ A) @ A.T
    return Y @ model.head_w.T + model.head_b


def mean_pce(model: MlpModel, U: np.ndarray, M: np.ndarray, Z: np.ndarray, labels: np.ndarray) -> float:
    """Mean PCE over feature rows ``Z`` [N, d] under the mask ``M``."""
    logits = _masked_logits(model, U * M, Z)
    rows = np.arange(len(labels))
    correct = np.argmax(logits, axis=1) == labels
    return float(np.mean(np.where(correct, log_softmax(logits)[rows, labels], 0.0)))


def mask_gradient_features(
    model: MlpModel, U: np.ndarray, M: np.ndarray, Z: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Gradient of mean PCE wrt ``M`` given extractor feature rows ``Z`` [N, d]."""
    n = Z.shape[0]
    A = U * M
    logits = _masked_logits(model, A, Z)
    logp = log_softmax(logits)
    bad = np.flatnonzero(~np.all(np.isfinite(logp), axis=1))
    if bad.size:
        raise FloatingPointError(f"non-finite logits for sample {int(bad[0])}")
    correct = np.argmax(logits, axis=1) == labels
    # d(-CE)/dlogits = onehot - softmax, only where the prediction is right
    dlogits = -np.exp(logp)
    dlogits[np.arange(n), labels] += 1.0
    dlogits[~correct] = 0.0
    G = dlogits @ model.head_w
    grad_A = (G.T @ Z + Z.T @ G) @ A
    return grad_A * U / n


def mask_gradient(
    model: MlpModel, U: np.ndarray, M: np.ndarray, batch_inputs: np.ndarray, batch_labels: np.ndarray
) -> np.ndarray:
    """Analytic ``d mean(PCE) / dM`` for a batch of raw inputs."""
    U = np.asarray(U, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    d = model.feature_dim
    if U.shape != (d, d) or M.shape != (d, d):
        raise ValueError(f"U and M must be {d}x{d}, got {U.shape} and {M.shape}")
    Z = forward_features(model, batch_inputs).T
    labels = np.asarray(batch_labels, dtype=np.int64)
    if labels.shape != (Z.shape[0],):
        raise ValueError("batch_labels length does not match batch_inputs")
    return mask_gradient_features(model, U, M, Z, labels)


def all_misclassified(model: MlpModel, U: np.ndarray, M: np.ndarray, Z: np.ndarray, labels: np.ndarray) -> bool:
    return not np.any(np.argmax(_masked_logits(model, U * M, Z), axis=1) == labels)


def train_mask(
    model: MlpModel,
    U: np.ndarray,
    forget: LabeledSet,
    cfg: EscTConfig | None = None,
    on_step: Callable[[np.ndarray], None] | None = None,
) -> MaskState:
    """Projected gradient descent on the mask, clipped to [0, 1], then binarized at tau.

    Stops at an epoch boundary (including before the first epoch) once every forget
    sample is misclassified by the masked model.
    """
    cfg = cfg or EscTConfig()
    if len(forget) == 0:
        raise ValueError("forget set must be non-empty")
    d = model.feature_dim
    U = np.asarray(U, dtype=np.float64)
    if U.shape != (d, d):
        raise ValueError(f"U must be {d}x{d}, got {U.shape}")

    # the extractor is frozen, so features are computed once
    Z = forward_features(model, forget.inputs).T
    labels = forget.labels
    rng = np.random.default_rng(cfg.seed)
    M = np.ones((d, d))
    state = MaskState(M=M)
    n = len(forget)

    if all_misclassified(model, U, M, Z, labels):
        state.stopped_early = True
    else:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                grad = mask_gradient_features(model, U, M, Z[idx], labels[idx])
                M = np.clip(M - cfg.learning_rate * grad, 0.0, 1.0)
                state.steps += 1
                if on_step is not None:
                    on_step(M)
            state.epochs_run = epoch + 1
            logits = _masked_logits(model, U * M, Z)
            correct = np.argmax(logits, axis=1) == labels
            state.history.append(float(np.mean(np.where(correct, log_softmax(logits)[np.arange(n), labels], 0.0))))
            if not correct.any():
                state.stopped_early = True
                break
    logger.info("mask training: %d epochs, %d steps, early stop=%s", state.epochs_run, state.steps, state.stopped_early)

    state.M = M
    state.M_R = (M > cfg.tau).astype(np.float64)
    state.binarized = True
    return state


def esc_t_fit(
    model: MlpModel, forget: LabeledSet, cfg: EscTConfig | None = None, center: bool = False
) -> tuple[RefinedBasis, MaskState]:
    """SVD of forget features followed by mask training."""
    cfg = cfg or EscTConfig()
    Z = forward_features(model, forget.inputs)
    if center:
        Z = Z - Z.mean(axis=1, keepdims=True)
    U = svd_complete(Z, seed=cfg.seed).U
    state = train_mask(model, U, forget, cfg)
    return RefinedBasis(U=U, M_R=state.M_R), state


def esc_t_apply(basis: RefinedBasis, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != basis.d:
        raise ValueError(f"vector dimension {z.shape[0]} does not match basis dimension {basis.d}")
    U_R = basis.U_R
    return U_R @ (U_R.T @ z)


def save_esc_t_sidecar(basis: RefinedBasis, tau: float, path: str | Path) -> None:
    doc = {
        "version": SIDECAR_VERSION,
        "kind": "esc-t",
        "d": basis.d,
        "tau": tau,
        "mask": basis.M_R.astype(int).tolist(),
        "basis_u": basis.U,
    }
    atomic_write(path, dump_json_exact(doc))
