"""Forget one class of a trained MLP by pruning its principal feature directions.

Trains the default 10-class blob model, fits ESC on the class-0 features and
prints accuracy before and after, for a few pruning percentages.
"""

from __future__ import annotations

from esc_unlearn.esc import EscConfig, esc_fit
from esc_unlearn.metrics import accuracy, harmonic_mean
from esc_unlearn.pipeline import DeskSetup, prepare

SEED = 0

split, model, history = prepare(DeskSetup(), SEED)
print(f"original: train acc {history['train_accuracy']:.2f}")
print(f"  forget {accuracy(model, split.forget_train):.2f}  remain {accuracy(model, split.remain_train):.2f}")

for p in (0, 1, 3, 10):
    basis = esc_fit(model, split.forget_train.inputs, EscConfig(p=p, seed=SEED))
    acc_f = accuracy(model, split.forget_train, basis)
    acc_r = accuracy(model, split.remain_train, basis)
    print(f"p={p:>2}  k={basis.k:>2}  forget {acc_f:6.2f}  remain {acc_r:6.2f}  HM {harmonic_mean(acc_f, acc_r):6.2f}")

# the model's weights are untouched; the erasure lives in a d x d projector
print("projector rank:", basis.d - basis.k, "of", basis.d)
