"""Synthetic blobs, CSV ingestion and forget/remain x train/test splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class LabeledSet:
    """Samples as rows ``inputs`` [N, m] with integer ``labels`` [N]."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} samples")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise ValueError("labels must be integers")
        if y.size and y.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, mask_or_idx) -> "LabeledSet":
        return LabeledSet(self.inputs[mask_or_idx], self.labels[mask_or_idx])

    @staticmethod
    def empty(input_dim: int) -> "LabeledSet":
        return LabeledSet(np.zeros((0, input_dim)), np.zeros(0, dtype=np.int64))

    @staticmethod
    def concat(*sets: "LabeledSet") -> "LabeledSet":
        return LabeledSet(
            np.concatenate([s.inputs for s in sets]),
            np.concatenate([s.labels for s in sets]),
        )


@dataclass(frozen=True)
class SplitDataset:
    forget_train: LabeledSet
    remain_train: LabeledSet
    forget_test: LabeledSet
    remain_test: LabeledSet
    forget_classes: tuple[int, ...] | None = None
    forget_indices: np.ndarray | None = field(default=None, repr=False)

    @property
    def full_train(self) -> LabeledSet:
        return LabeledSet.concat(self.forget_train, self.remain_train)


def _simplex_means(classes: int, input_dim: int, separation: float, rng) -> np.ndarray:
    # regular simplex vertices e_i - centroid have pairwise distance sqrt(2)
    if classes <= input_dim:
        verts = np.eye(classes) - 1.0 / classes
        verts *= separation / math.sqrt(2.0)
        Q, _ = np.linalg.qr(rng.standard_normal((input_dim, input_dim)))
        return verts @ Q[:classes, :]
    # more classes than dimensions: scaled random hypercube corners
    if classes > 2**input_dim:
        raise ValueError(
            f"cannot place {classes} separated means in {input_dim} dimensions; "
            "raise input_dim"
        )
    corners = rng.choice(2**input_dim, size=classes, replace=False)
    bits = (corners[:, None] >> np.arange(input_dim)) & 1
    return bits.astype(np.float64) * separation


def generate_blobs(
    classes: int,
    per_class_train: int,
    per_class_test: int,
    input_dim: int,
    separation: float = 8.0,
    seed: int = 0,
) -> tuple[LabeledSet, LabeledSet]:
    """Unit-covariance Gaussian clusters, one per class, returned as (train, test).

    Class means sit on a randomly rotated regular simplex scaled so every pair of
    means is at distance >= ``separation``.
    """
    for name, v in [
        ("classes", classes),
        ("per_class_train", per_class_train),
        ("per_class_test", per_class_test),
        ("input_dim", input_dim),
    ]:
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    if separation <= 0:
        raise ValueError(f"separation must be positive, got {separation}")

    rng = np.random.default_rng(seed)
    means = _simplex_means(classes, input_dim, separation, rng)

    def draw(per_class):
        x = np.concatenate(
            [means[c] + rng.standard_normal((per_class, input_dim)) for c in range(classes)]
        )
        y = np.repeat(np.arange(classes), per_class)
        return LabeledSet(x, y)

    train = draw(per_class_train)
    test = draw(per_class_test)
    return train, test


def split_by_classes(
    train: LabeledSet, test: LabeledSet, forget_classes: Sequence[int], num_classes: int | None = None
) -> SplitDataset:
    forget = sorted({int(c) for c in forget_classes})
    if not forget:
        raise ValueError("forget_classes must be non-empty")
    if num_classes is None:
        num_classes = int(max(train.labels.max(), test.labels.max() if len(test) else 0)) + 1
    bad = [c for c in forget if not 0 <= c < num_classes]
    if bad:
        raise ValueError(f"forget classes {bad} are outside [0, {num_classes})")
    if len(forget) >= num_classes:
        raise ValueError("forget_classes covers every class; nothing would remain")

    f_tr = np.isin(train.labels, forget)
    f_te = np.isin(test.labels, forget)
    return SplitDataset(
        forget_train=train.subset(f_tr),
        remain_train=train.subset(~f_tr),
        forget_test=test.subset(f_te),
        remain_test=test.subset(~f_te),
        forget_classes=tuple(forget),
    )


def split_random(train: LabeledSet, test: LabeledSet, fraction: float, seed: int = 0) -> SplitDataset:
    """Forget a uniform random ``floor(fraction * N)`` subset of the training rows.

    There is no forget-test partition in this setting; the whole test set is
    treated as remain-test.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n = len(train)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=int(math.floor(fraction * n)), replace=False))
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return SplitDataset(
        forget_train=train.subset(mask),
        remain_train=train.subset(~mask),
        forget_test=LabeledSet.empty(train.input_dim),
        remain_test=test,
        forget_indices=idx,
    )


def save_csv(data: LabeledSet, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(data.input_dim)] + ["label"])
        for row, label in zip(data.inputs, data.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path: str | Path, num_classes: int | None = None) -> LabeledSet:
    """Read ``f0,...,f{m-1},label`` rows. Errors name the offending row and column."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if not header or header[-1].strip() != "label":
            raise ValueError(f"{path}: last header column must be 'label', got {header!r}")
        m = len(header) - 1
        if m < 1:
            raise ValueError(f"{path}: no feature columns")
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != m + 1:
                raise ValueError(f"{path}: row {lineno} has {len(row)} cells, expected {m + 1}")
            feats = []
            for j, cell in enumerate(row[:m]):
                try:
                    feats.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {lineno} column {header[j]!r} is not numeric: {cell!r}"
                    ) from None
            try:
                label = int(row[m])
            except ValueError:
                raise ValueError(f"{path}: row {lineno} label is not an integer: {row[m]!r}") from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise ValueError(
                    f"{path}: row {lineno} label {label} outside [0, {num_classes})"
                )
            xs.append(feats)
            ys.append(label)
    if not xs:
        raise ValueError(f"{path}: no data rows")
    return LabeledSet(np.array(xs), np.array(ys, dtype=np.int64))


def write_manifest(path: str | Path, classes: int, input_dim: int, train: str, test: str, seed: int) -> None:
    manifest = {"classes": classes, "input_dim": input_dim, "train": train, "test": test, "seed": seed}
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> tuple[dict, LabeledSet, LabeledSet]:
    """Load a dataset manifest and both CSVs it points to (paths relative to the manifest)."""
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    for key in ("classes", "input_dim", "train", "test"):
        if key not in manifest:
            raise ValueError(f"{path}: manifest missing {key!r}")
    base = path.parent
    train = load_csv(base / manifest["train"], num_classes=manifest["classes"])
    test = load_csv(base / manifest["test"], num_classes=manifest["classes"])
    for name, ds in (("train", train), ("test", test)):
        if ds.input_dim != manifest["input_dim"]:
            raise ValueError(
                f"{path}: {name} has {ds.input_dim} features, manifest says {manifest['input_dim']}"
            )
    return manifest, train, test
