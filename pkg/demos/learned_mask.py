"""Refine the erasure with a learned mask over the principal directions.

Shows the trained mask (kept in [0, 1] after every step), the binarized
mask at tau = 0.75 and how many entries each basis column loses.
"""

from __future__ import annotations

import numpy as np

from esc_unlearn.esc_t import EscTConfig, esc_t_fit
from esc_unlearn.metrics import accuracy, harmonic_mean
from esc_unlearn.pipeline import DeskSetup, prepare

SEED = 0

split, model, _ = prepare(DeskSetup(), SEED)
refined, state = esc_t_fit(model, split.forget_train, EscTConfig(tau=0.75, seed=SEED))
print(f"{state.steps} mask steps over {state.epochs_run} epochs, early stop {state.stopped_early}")
print(f"mask range [{state.M.min():.3f}, {state.M.max():.3f}], mean {state.M.mean():.3f}")

acc_f = accuracy(model, split.forget_train, refined)
acc_r = accuracy(model, split.remain_train, refined)
print(f"forget {acc_f:.2f}  remain {acc_r:.2f}  HM {harmonic_mean(acc_f, acc_r):.2f}")

zeros_per_column = (state.M_R == 0).sum(axis=0)
print("zeroed entries per basis column (first 8):", zeros_per_column[:8].tolist())
print("fully dropped columns:", int(np.sum(zeros_per_column == refined.d)))
