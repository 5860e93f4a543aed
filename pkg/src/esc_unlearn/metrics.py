"""Evaluation: split accuracies, mean metrics, linear-probe retention, MIA, ZRF, diagnostics.

Accuracy-like quantities are percentages. A metric over an empty split is ``None``
("not applicable") and never 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .data import LabeledSet, SplitDataset
from .model import (
    MlpModel,
    uniform_layer,
    cross_entropy,
    forward_features,
    forward_logits,
    hook_matrix,
    softmax,
)

REPORT_VERSION = 1
CSV_COLUMNS = [
    "method", "acc_f", "acc_r", "acc_ft", "acc_rt", "hm", "hm_t", "mia", "zrf",
    "kr_acc_f", "kr_acc_r", "kr_acc_ft", "kr_acc_rt", "seconds",
]


def accuracy(model: MlpModel, data: LabeledSet, feature_hook=None) -> float | None:
    if len(data) == 0:
        return None
    pred = np.argmax(forward_logits(model, data.inputs, feature_hook), axis=0)
    return 100.0 * float(np.count_nonzero(pred == data.labels)) / len(data)


def harmonic_mean(acc_f: float, acc_r: float) -> float:
    forgot = 100.0 - acc_f
    denom = forgot + acc_r
    return 0.0 if denom == 0 else 2.0 * forgot * acc_r / denom


def mean_metrics(acc_f: float, acc_r: float) -> dict[str, float]:
    """HM, AM, GM and unlearning score (US) of forget error and remain accuracy."""
    for name, v in (("acc_f", acc_f), ("acc_r", acc_r)):
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"{name} must be a percentage in [0, 100], got {v}")
    forgot = 100.0 - acc_f
    return {
        "hm": harmonic_mean(acc_f, acc_r),
        "am": (acc_r + forgot) / 2.0,
        "gm": math.sqrt(acc_r * forgot),
        "us": (math.exp(acc_r / 100.0) + math.exp(1.0 - acc_f / 100.0) - 2.0) / (2.0 * (math.e - 1.0)),
    }


def recovery_rate(probed_forget_acc: float, original_forget_acc: float) -> float | None:
    if original_forget_acc == 0:
        return None
    return probed_forget_acc / original_forget_acc


# --- linear probing ---------------------------------------------------------------


@dataclass
class ProbeConfig:
    epochs: int = 10
    learning_rate: float = 0.001
    batch_size: int = 64
    seed: int = 0


def _probe_features(model: MlpModel, inputs: np.ndarray, feature_hook) -> np.ndarray:
    Z = forward_features(model, inputs)
    P = hook_matrix(feature_hook, model.feature_dim)
    if P is not None:
        Z = P @ Z
    return Z.T


def train_probe(
    features: np.ndarray, labels: np.ndarray, classes: int, cfg: ProbeConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Fresh linear softmax head on frozen feature rows, plain mini-batch SGD."""
    rng = np.random.default_rng(cfg.seed)
    W, b = uniform_layer(rng, features.shape[1], classes)
    n = features.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            X, y = features[idx], labels[idx]
            delta = softmax(X @ W.T + b)
            delta[np.arange(len(idx)), y] -= 1.0
            delta /= len(idx)
            W -= cfg.learning_rate * (delta.T @ X)
            b -= cfg.learning_rate * delta.sum(axis=0)
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise FloatingPointError("linear probe diverged")
    return W, b


def kr_probe(
    model: MlpModel, split: SplitDataset, feature_hook=None, cfg: ProbeConfig | None = None
) -> "EvalReport":
    """Knowledge-retention probe: train a new head on frozen (possibly erased) features.

    The head is fit on the full training set (forget plus remain) and evaluated on
    all four splits. ``model`` is not modified.
    """
    cfg = cfg or ProbeConfig()
    full = split.full_train
    W, b = train_probe(_probe_features(model, full.inputs, feature_hook), full.labels, model.classes, cfg)

    def acc(data: LabeledSet):
        if len(data) == 0:
            return None
        pred = np.argmax(_probe_features(model, data.inputs, feature_hook) @ W.T + b, axis=1)
        return 100.0 * float(np.mean(pred == data.labels))

    report = EvalReport(
        method="kr-probe",
        acc_f=acc(split.forget_train),
        acc_r=acc(split.remain_train),
        acc_ft=acc(split.forget_test),
        acc_rt=acc(split.remain_test),
    )
    report.fill_means()
    return report


# --- privacy metrics -------------------------------------------------------------


def best_threshold_accuracy(member_scores: np.ndarray, nonmember_scores: np.ndarray) -> tuple[float, float]:
    """Best balanced accuracy of a single threshold on a scalar score, either polarity.

    Candidates are every midpoint between adjacent distinct sorted values plus the
    two trivial thresholds. Returns (balanced accuracy in [0.5, 1], threshold).
    """
    m = np.asarray(member_scores, dtype=np.float64)
    nm = np.asarray(nonmember_scores, dtype=np.float64)
    values = np.concatenate([m, nm])
    is_member = np.concatenate([np.ones(m.size, bool), np.zeros(nm.size, bool)])
    order = np.argsort(values, kind="stable")
    values, is_member = values[order], is_member[order]
    # rule "member iff score <= t" with t after position i (i = -1 .. n-1)
    tp = np.concatenate([[0], np.cumsum(is_member)])
    fp = np.concatenate([[0], np.cumsum(~is_member)])
    bal = 0.5 * (tp / m.size + (nm.size - fp) / nm.size)
    # only cut between distinct values
    valid = np.ones(values.size + 1, bool)
    valid[1:-1] = values[1:] != values[:-1]
    bal = np.where(valid, np.maximum(bal, 1.0 - bal), -np.inf)
    i = int(np.argmax(bal))
    if i == 0:
        thr = -np.inf
    elif i == values.size:
        thr = np.inf
    else:
        thr = 0.5 * (values[i - 1] + values[i])
    return float(bal[i]), float(thr)


def mia_score(
    model: MlpModel, forget_train: LabeledSet, forget_test: LabeledSet, feature_hook=None
) -> float | None:
    """Loss-threshold membership attack: balanced accuracy (%) separating D_f from D_ft."""
    if len(forget_train) == 0 or len(forget_test) == 0:
        return None
    members = cross_entropy(model, forget_train.inputs, forget_train.labels, feature_hook)
    nonmembers = cross_entropy(model, forget_test.inputs, forget_test.labels, feature_hook)
    return 100.0 * best_threshold_accuracy(members, nonmembers)[0]


def js_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Base-2 Jensen-Shannon divergence between row distributions, in [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)

    def kl(a, b):
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(a > 0, a * (np.log2(a) - np.log2(b)), 0.0)
        return terms.sum(axis=-1)

    return np.clip(0.5 * kl(p, m) + 0.5 * kl(q, m), 0.0, 1.0)


def zrf(
    model: MlpModel, random_model: MlpModel, forget: LabeledSet, feature_hook=None, random_hook=None
) -> float:
    """1 - mean JS divergence between the model's and a random model's outputs on D_f."""
    if model.classes != random_model.classes:
        raise ValueError("models must have the same number of classes")
    p = softmax(forward_logits(model, forget.inputs, feature_hook).T)
    q = softmax(forward_logits(random_model, forget.inputs, random_hook).T)
    return float(1.0 - np.mean(js_divergence(p, q)))


# --- diagnostics -----------------------------------------------------------------


def weight_diff(original: MlpModel, unlearned: MlpModel) -> dict[str, float]:
    """Per-layer share-weighted relative change of parameters (weights and bias together).

    Layer l gets ``gamma_l * ||θ_l^ori - θ_l^ul|| / ||θ_l^ori||`` with
    ``gamma_l = ||θ_l^ori|| / sum_m ||θ_m^ori||`` (Frobenius norms).
    """
    if original.layer_sizes != unlearned.layer_sizes or original.classes != unlearned.classes:
        raise ValueError("models have different architectures")

    def layers(m: MlpModel):
        out = [(f"layer{i}", np.concatenate([l.w.ravel(), l.b])) for i, l in enumerate(m.extractor)]
        return out + [("head", np.concatenate([m.head_w.ravel(), m.head_b]))]

    ori, ul = layers(original), layers(unlearned)
    norms = [np.linalg.norm(t) for _, t in ori]
    total = sum(norms)
    result = {}
    for (name, a), (_, b), norm in zip(ori, ul, norms):
        rel = np.linalg.norm(a - b) / norm if norm > 0 else 0.0
        result[name] = float(norm / total * rel) if total > 0 else 0.0
    result["extractor_total"] = float(sum(v for k, v in result.items() if k != "head"))
    return result


def class_means(features_by_class: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Mean feature vector per class from feature-major [d, n] blocks."""
    out = {}
    for c, Z in features_by_class.items():
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] == 0:
            raise ValueError(f"class {c} has no feature columns")
        out[c] = Z.mean(axis=1)
    return out


def class_cosine_matrix(
    features_by_class: Mapping[int, np.ndarray], other: Mapping[int, np.ndarray] | None = None
) -> np.ndarray:
    """Cosine similarity between class-mean features; NaN where a mean has zero norm.

    With ``other``, entry (i, j) compares class i of the first map with class j of
    the second (e.g. original vs erased features).
    """
    rows = class_means(features_by_class)
    cols = class_means(other) if other is not None else rows
    r_keys, c_keys = sorted(rows), sorted(cols)
    out = np.full((len(r_keys), len(c_keys)), np.nan)
    for i, a in enumerate(r_keys):
        for j, b in enumerate(c_keys):
            na, nb = np.linalg.norm(rows[a]), np.linalg.norm(cols[b])
            if na > 0 and nb > 0:
                out[i, j] = float(rows[a] @ cols[b] / (na * nb))
    return out


def features_by_class(model: MlpModel, data: LabeledSet, feature_hook=None) -> dict[int, np.ndarray]:
    Z = forward_features(model, data.inputs)
    P = hook_matrix(feature_hook, model.feature_dim)
    if P is not None:
        Z = P @ Z
    return {int(c): Z[:, data.labels == c] for c in np.unique(data.labels)}


# --- reports ---------------------------------------------------------------------


@dataclass
class EvalReport:
    method: str = ""
    acc_f: float | None = None
    acc_r: float | None = None
    acc_ft: float | None = None
    acc_rt: float | None = None
    hm: float | None = None
    hm_t: float | None = None
    am: float | None = None
    gm: float | None = None
    us: float | None = None
    mia: float | None = None
    zrf: float | None = None
    kr: "EvalReport | None" = None
    seconds: float | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def fill_means(self) -> None:
        if self.acc_f is not None and self.acc_r is not None:
            means = mean_metrics(self.acc_f, self.acc_r)
            self.hm, self.am, self.gm, self.us = means["hm"], means["am"], means["gm"], means["us"]
        if self.acc_ft is not None and self.acc_rt is not None:
            self.hm_t = harmonic_mean(self.acc_ft, self.acc_rt)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kr"] = self.kr.to_dict() if self.kr is not None else None
        d["version"] = REPORT_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        version = d.pop("version", None)
        if version != REPORT_VERSION:
            raise ValueError(f"report version: expected {REPORT_VERSION}, got {version!r}")
        kr = d.pop("kr", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown report fields {sorted(unknown)}")
        report = cls(**d)
        if kr is not None:
            kr = dict(kr, version=REPORT_VERSION) if "version" not in kr else kr
            report.kr = cls.from_dict(kr)
        return report

    def csv_row(self) -> dict:
        kr = self.kr or EvalReport()
        return {
            "method": self.method,
            "acc_f": self.acc_f,
            "acc_r": self.acc_r,
            "acc_ft": self.acc_ft,
            "acc_rt": self.acc_rt,
            "hm": self.hm,
            "hm_t": self.hm_t,
            "mia": self.mia,
            "zrf": self.zrf,
            "kr_acc_f": kr.acc_f,
            "kr_acc_r": kr.acc_r,
            "kr_acc_ft": kr.acc_ft,
            "kr_acc_rt": kr.acc_rt,
            "seconds": self.seconds,
        }


def evaluate(
    model: MlpModel,
    split: SplitDataset,
    feature_hook=None,
    method: str = "",
    random_model: MlpModel | None = None,
    probe: ProbeConfig | None = None,
    seconds: float | None = None,
    seed: int | None = None,
) -> EvalReport:
    """Full report: split accuracies, means, MIA, optionally ZRF and the KR probe."""
    report = EvalReport(
        method=method,
        acc_f=accuracy(model, split.forget_train, feature_hook),
        acc_r=accuracy(model, split.remain_train, feature_hook),
        acc_ft=accuracy(model, split.forget_test, feature_hook),
        acc_rt=accuracy(model, split.remain_test, feature_hook),
        mia=mia_score(model, split.forget_train, split.forget_test, feature_hook),
        seconds=seconds,
        seed=seed,
    )
    report.fill_means()
    if random_model is not None and len(split.forget_train):
        report.zrf = zrf(model, random_model, split.forget_train, feature_hook)
    if probe is not None:
        report.kr = kr_probe(model, split, feature_hook, probe)
    return report
