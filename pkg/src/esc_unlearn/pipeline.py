"""End-to-end helpers: dispatch an unlearning method and run the desk-scale experiment."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import baselines
from .data import SplitDataset, generate_blobs, split_by_classes
from .esc import EscConfig, esc_fit
from .esc_t import EscTConfig, esc_t_fit
from .metrics import EvalReport, ProbeConfig, evaluate
from .model import MlpModel, TrainConfig, init_model, train

METHODS = ("esc", "esc-t", "ng", "rl", "finetune", "retrain")
DEFAULT_ARCH = (64, 32)


@dataclass
class UnlearnResult:
    """An unlearned model: parameters plus an optional feature transform."""

    method: str
    model: MlpModel
    transform: object | None = None
    seconds: float = 0.0
    info: dict = field(default_factory=dict)


def unlearn(
    method: str,
    model: MlpModel,
    split: SplitDataset,
    seed: int = 0,
    esc: EscConfig | None = None,
    esc_t: EscTConfig | None = None,
    baseline: baselines.BaselineConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> UnlearnResult:
    """Run one method; ``seconds`` covers the method phase only."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    t0 = time.perf_counter()
    if method == "esc":
        basis = esc_fit(model, split.forget_train.inputs, esc or EscConfig(seed=seed))
        out = UnlearnResult(method, model, basis, info={"k": basis.k})
    elif method == "esc-t":
        cfg = esc_t or EscTConfig(seed=seed)
        basis, state = esc_t_fit(model, split.forget_train, cfg)
        out = UnlearnResult(
            method, model, basis,
            info={"epochs_run": state.epochs_run, "steps": state.steps, "zeroed": int((basis.M_R == 0).sum())},
        )
    elif method == "retrain":
        cfg = train_cfg or TrainConfig(seed=seed)
        new, hist = baselines.retrain(split.remain_train, model.layer_sizes, cfg, model.classes)
        out = UnlearnResult(method, new, info={"loss": hist["loss"][-1]})
    else:
        cfg = baseline or baselines.BaselineConfig(method, seed=seed)
        fn = {"ng": baselines.negative_gradient, "rl": baselines.random_label, "finetune": baselines.finetune}[method]
        data = split.remain_train if method == "finetune" else split.forget_train
        new, hist = fn(model, data, cfg)
        out = UnlearnResult(method, new, info={"diverged": hist["diverged"]})
    out.seconds = time.perf_counter() - t0
    return out


@dataclass
class DeskSetup:
    classes: int = 10
    per_class_train: int = 500
    per_class_test: int = 100
    input_dim: int = 20
    separation: float = 8.0
    arch: Sequence[int] = DEFAULT_ARCH
    forget_classes: Sequence[int] = (0,)
    train: TrainConfig = field(default_factory=TrainConfig)


def prepare(setup: DeskSetup, seed: int) -> tuple[SplitDataset, MlpModel, dict]:
    """Generate blobs, split, and train the original model for one seed."""
    train_set, test_set = generate_blobs(
        setup.classes, setup.per_class_train, setup.per_class_test, setup.input_dim, setup.separation, seed
    )
    split = split_by_classes(train_set, test_set, setup.forget_classes, setup.classes)
    cfg = TrainConfig(**{**setup.train.__dict__, "seed": seed})
    model, history = train(train_set, [setup.input_dim, *setup.arch], cfg, classes=setup.classes)
    return split, model, history


def random_reference(model: MlpModel, seed: int) -> MlpModel:
    """Untrained model with the same architecture, for ZRF."""
    return init_model(model.layer_sizes, model.classes, seed=seed + 10_000)


def evaluate_methods(
    split: SplitDataset,
    model: MlpModel,
    seed: int,
    methods: Sequence[str] = METHODS,
    probe: ProbeConfig | None = ProbeConfig(),
    train_cfg: TrainConfig | None = None,
) -> dict[str, tuple[UnlearnResult | None, EvalReport]]:
    """Unlearn with each method from one trained model; ``original`` is included."""
    train_cfg = TrainConfig(**{**(train_cfg or TrainConfig()).__dict__, "seed": seed})
    rnd = random_reference(model, seed)
    pc = ProbeConfig(**{**probe.__dict__, "seed": seed}) if probe else None
    out = {"original": (None, evaluate(model, split, None, "original", rnd, pc, seed=seed))}
    for method in methods:
        res = unlearn(method, model, split, seed=seed, train_cfg=train_cfg)
        out[method] = (res, evaluate(res.model, split, res.transform, method, rnd, pc, res.seconds, seed))
    return out


def run_desk(
    setup: DeskSetup | None = None,
    seeds: Sequence[int] = (0, 1, 2),
    methods: Sequence[str] = METHODS,
    probe: ProbeConfig | None = ProbeConfig(),
) -> dict[str, list[EvalReport]]:
    """Reports per method (plus ``original``) across seeds."""
    setup = setup or DeskSetup()
    out: dict[str, list[EvalReport]] = {m: [] for m in ("original", *methods)}
    for seed in seeds:
        split, model, _ = prepare(setup, seed)
        for method, (_, report) in evaluate_methods(split, model, seed, methods, probe, setup.train).items():
            out[method].append(report)
    return out


def mean_of(reports: Sequence[EvalReport], attr: str) -> float:
    vals = [getattr(r, attr) for r in reports]
    return float(np.mean([v for v in vals if v is not None]))
