"""Feedforward classifier: feature extractor (relu MLP) plus a linear head.

Weights are stored as ``[out, in]`` so a layer computes ``act(W x + b)``. Batches
are row-major ``[N, m]`` internally; ``forward_features`` returns the feature
matrix feature-major ``[d, N]``.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import LabeledSet

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "identity")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    w: np.ndarray
    b: np.ndarray
    act: str = "relu"


@dataclass(frozen=True)
class MlpModel:
    extractor: tuple[Layer, ...]
    head_w: np.ndarray
    head_b: np.ndarray
    seed: int = 0

    def __post_init__(self):
        dims = [self.input_dim]
        for i, layer in enumerate(self.extractor):
            if layer.act not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {layer.act!r}")
            if layer.w.shape[1] != dims[-1] or layer.b.shape != (layer.w.shape[0],):
                raise ValueError(f"layer {i}: shapes {layer.w.shape}/{layer.b.shape} do not chain")
            dims.append(layer.w.shape[0])
        if self.head_w.shape[1] != dims[-1] or self.head_b.shape != (self.head_w.shape[0],):
            raise ValueError(f"head shapes {self.head_w.shape}/{self.head_b.shape} do not chain")
        for p in self.params():
            if not np.all(np.isfinite(p)):
                raise ValueError("model parameters must be finite")

    @property
    def input_dim(self) -> int:
        return (self.extractor[0].w if self.extractor else self.head_w).shape[1]

    @property
    def feature_dim(self) -> int:
        return self.head_w.shape[1]

    @property
    def classes(self) -> int:
        return self.head_w.shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [layer.w.shape[0] for layer in self.extractor]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.extractor:
            out += [layer.w, layer.b]
        return out + [self.head_w, self.head_b]

    def with_params(self, params: Sequence[np.ndarray]) -> "MlpModel":
        params = [np.array(p, dtype=np.float64) for p in params]
        layers = tuple(
            Layer(params[2 * i], params[2 * i + 1], layer.act) for i, layer in enumerate(self.extractor)
        )
        return replace(self, extractor=layers, head_w=params[-2], head_b=params[-1])


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def uniform_layer(rng, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)


def init_model(arch: Sequence[int], classes: int, seed: int = 0, final_act: str = "relu") -> MlpModel:
    """Seeded He-uniform init. ``arch`` lists input_dim followed by extractor widths."""
    arch = list(arch)
    if len(arch) < 1 or any(a < 1 for a in arch):
        raise ValueError(f"invalid architecture {arch}")
    if classes < 1:
        raise ValueError("classes must be >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(arch[:-1], arch[1:])):
        w, b = uniform_layer(rng, fan_in, fan_out)
        act = "relu" if i < len(arch) - 2 else final_act
        layers.append(Layer(w, b, act))
    hw, hb = uniform_layer(rng, arch[-1], classes)
    return MlpModel(tuple(layers), hw, hb, seed=seed)


def _act(a: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(a, 0.0) if kind == "relu" else a


def _features_rows(model: MlpModel, X: np.ndarray) -> np.ndarray:
    h = X
    for layer in model.extractor:
        h = _act(h @ layer.w.T + layer.b, layer.act)
    return h


def _check_inputs(model: MlpModel, inputs) -> np.ndarray:
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"inputs of shape {X.shape} do not match input_dim {model.input_dim}")
    return X


def forward_features(model: MlpModel, inputs) -> np.ndarray:
    """Extractor output, feature-major ``[d, N]``."""
    return _features_rows(model, _check_inputs(model, inputs)).T


def hook_matrix(feature_hook, d: int) -> np.ndarray | None:
    """Resolve a feature hook (None, a [d, d] array, or anything with ``.matrix``)."""
    if feature_hook is None:
        return None
    P = np.asarray(getattr(feature_hook, "matrix", feature_hook), dtype=np.float64)
    if P.shape != (d, d):
        raise ValueError(f"feature transform has shape {P.shape}, expected ({d}, {d})")
    return P


def logits_from_features(model: MlpModel, Z: np.ndarray, feature_hook=None) -> np.ndarray:
    """Head applied to feature-major ``Z`` [d, N], optionally transformed first. Returns [C, N]."""
    if Z.shape[0] != model.feature_dim:
        raise ValueError(f"features have dimension {Z.shape[0]}, head expects {model.feature_dim}")
    P = hook_matrix(feature_hook, model.feature_dim)
    if P is not None:
        Z = P @ Z
    return model.head_w @ Z + model.head_b[:, None]


def forward_logits(model: MlpModel, inputs, feature_hook=None) -> np.ndarray:
    """Logits ``head(hook(extractor(x)))`` as ``[C, N]``."""
    return logits_from_features(model, forward_features(model, inputs), feature_hook)


def predict(model: MlpModel, inputs, feature_hook=None) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(forward_logits(model, inputs, feature_hook), axis=0)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(logits, axis=axis, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(logits, axis=axis))


def cross_entropy(model: MlpModel, X: np.ndarray, y: np.ndarray, feature_hook=None) -> np.ndarray:
    """Per-sample cross-entropy [N]."""
    logits = forward_logits(model, X, feature_hook).T
    return -log_softmax(logits)[np.arange(len(y)), y]


def loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    n = X.shape[0]
    pre, post = [], [X]
    h = X
    for layer in model.extractor:
        a = h @ layer.w.T + layer.b
        h = _act(a, layer.act)
        pre.append(a)
        post.append(h)
    logits = h @ model.head_w.T + model.head_b
    logp = log_softmax(logits)
    loss = -float(np.mean(logp[np.arange(n), y]))

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * (2 * len(model.extractor) + 2)
    grads[-2] = delta.T @ h
    grads[-1] = delta.sum(axis=0)
    back = delta @ model.head_w
    for i in range(len(model.extractor) - 1, -1, -1):
        layer = model.extractor[i]
        if layer.act == "relu":
            back = back * (pre[i] > 0)
        grads[2 * i] = back.T @ post[i]
        grads[2 * i + 1] = back.sum(axis=0)
        if i:
            back = back @ layer.w
    return loss, grads


def accuracy_on(model: MlpModel, data: LabeledSet, feature_hook=None) -> float:
    return 100.0 * float(np.mean(predict(model, data.inputs, feature_hook) == data.labels))


def sgd(
    model: MlpModel,
    data: LabeledSet,
    cfg: TrainConfig,
    ascent: bool = False,
    stop_on_divergence: bool = False,
) -> tuple[MlpModel, dict]:
    """Mini-batch momentum SGD on mean cross-entropy starting from ``model``.

    With ``ascent`` the update direction is flipped (gradient ascent). When
    ``stop_on_divergence`` is set a non-finite loss ends training and the last
    finite model is returned with ``history["diverged"]`` set; otherwise
    ``TrainingDiverged`` is raised.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty set")
    if data.input_dim != model.input_dim:
        raise ValueError(f"data has {data.input_dim} features, model expects {model.input_dim}")
    if data.labels.max() >= model.classes:
        raise ValueError(f"label {data.labels.max()} out of range for {model.classes} classes")

    rng = np.random.default_rng(cfg.seed)
    params = [p.copy() for p in model.params()]
    velocity = [np.zeros_like(p) for p in params]
    sign = 1.0 if ascent else -1.0
    history = {"loss": [], "diverged": False}
    n = len(data)
    current = model

    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        last_good = [p.copy() for p in params]
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grads(current, data.inputs[idx], data.labels[idx])
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                if stop_on_divergence:
                    logger.warning("divergence at epoch %d; keeping last finite state", epoch)
                    history["diverged"] = True
                    return model.with_params(last_good), history
                raise TrainingDiverged(epoch, loss)
            total += loss * len(idx)
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v += g
                p += sign * cfg.learning_rate * v
            if not all(np.all(np.isfinite(p)) for p in params):
                if stop_on_divergence:
                    logger.warning("divergence at epoch %d; keeping last finite state", epoch)
                    history["diverged"] = True
                    return model.with_params(last_good), history
                raise TrainingDiverged(epoch, float("nan"))
            last_good = [p.copy() for p in params]
            current = model.with_params(params)
        history["loss"].append(total / n)
        logger.debug("epoch %d loss %.6f", epoch, total / n)
    return current, history


def train(data: LabeledSet, arch: Sequence[int], cfg: TrainConfig, classes: int | None = None) -> tuple[MlpModel, dict]:
    """Train a fresh seeded model. Returns ``(model, history)``.

    ``arch`` is ``[input_dim, hidden..., d]``; history holds per-epoch mean loss and
    the final train accuracy.
    """
    arch = list(arch)
    if arch[0] != data.input_dim:
        raise ValueError(f"arch starts at {arch[0]} but data has {data.input_dim} features")
    if classes is None:
        classes = int(data.labels.max()) + 1
    model = init_model(arch, classes, seed=cfg.seed)
    model, history = sgd(model, data, cfg)
    history["train_accuracy"] = accuracy_on(model, data)
    logger.info("trained %s: final loss %.4f, train acc %.2f%%", arch, history["loss"][-1], history["train_accuracy"])
    return model, history


# --- checkpoint I/O -------------------------------------------------------------


def _num(v: float) -> str:
    # 17 significant digits: exact float64 round-trip
    return format(float(v), ".16e")


def _dump(obj) -> str:
    if isinstance(obj, np.ndarray):
        if obj.ndim == 1:
            return "[" + ",".join(_num(v) for v in obj) + "]"
        return "[" + ",".join(_dump(row) for row in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(k)}:{_dump(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_dump(v) for v in obj) + "]"
    return json.dumps(obj)


def dump_json_exact(obj) -> str:
    """JSON text with every ndarray entry written to 17 significant digits."""
    return _dump(obj) + "\n"


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def model_to_dict(model: MlpModel) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "meta": {
            "input_dim": model.input_dim,
            "feature_dim": model.feature_dim,
            "classes": model.classes,
            "seed": model.seed,
        },
        "extractor": [{"w": l.w, "b": l.b, "act": l.act} for l in model.extractor],
        "head": {"w": model.head_w, "b": model.head_b},
    }


def save_checkpoint(model: MlpModel, path: str | Path) -> None:
    atomic_write(path, dump_json_exact(model_to_dict(model)))


def _matrix(obj, where: str, ndim: int) -> np.ndarray:
    try:
        a = np.array(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{where}: not a numeric array ({exc})") from None
    if a.ndim != ndim:
        raise CheckpointError(f"{where}: expected {ndim}-D array, got shape {a.shape}")
    return a


def model_from_dict(doc: dict) -> MlpModel:
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint root must be an object")
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"version: expected {CHECKPOINT_VERSION}, got {version!r}")
    for key in ("meta", "extractor", "head"):
        if key not in doc:
            raise CheckpointError(f"{key}: missing")
    meta = doc["meta"]
    for key in ("input_dim", "feature_dim", "classes", "seed"):
        if key not in meta:
            raise CheckpointError(f"meta.{key}: missing")
    layers = []
    for i, entry in enumerate(doc["extractor"]):
        for key in ("w", "b", "act"):
            if key not in entry:
                raise CheckpointError(f"extractor[{i}].{key}: missing")
        w = _matrix(entry["w"], f"extractor[{i}].w", 2)
        b = _matrix(entry["b"], f"extractor[{i}].b", 1)
        layers.append(Layer(w, b, entry["act"]))
    head = doc["head"]
    for key in ("w", "b"):
        if key not in head:
            raise CheckpointError(f"head.{key}: missing")
    try:
        model = MlpModel(
            tuple(layers),
            _matrix(head["w"], "head.w", 2),
            _matrix(head["b"], "head.b", 1),
            seed=int(meta["seed"]),
        )
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    for key, actual in (
        ("input_dim", model.input_dim),
        ("feature_dim", model.feature_dim),
        ("classes", model.classes),
    ):
        if meta[key] != actual:
            raise CheckpointError(f"meta.{key}: declared {meta[key]}, parameters imply {actual}")
    return model


def load_checkpoint(path: str | Path) -> MlpModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    try:
        return model_from_dict(doc)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
