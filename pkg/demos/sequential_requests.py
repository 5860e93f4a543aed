"""Serve two deletion requests one after the other and merge the projectors.

The second fit runs on features already passed through the first projector,
so the merged matrix forgets both classes in a single d x d product.
"""

from __future__ import annotations

import numpy as np

from esc_unlearn.esc import EscConfig, esc_apply, esc_fit, esc_fit_after
from esc_unlearn.metrics import accuracy
from esc_unlearn.model import forward_features
from esc_unlearn.pipeline import DeskSetup, prepare

SEED = 0

split, model, _ = prepare(DeskSetup(), SEED)
full = split.full_train
first_class, second_class = full.subset(full.labels == 0), full.subset(full.labels == 1)
rest = full.subset(full.labels > 1)

first = esc_fit(model, first_class.inputs, EscConfig(seed=SEED))
second, merged = esc_fit_after(model, first, second_class.inputs, EscConfig(seed=SEED))

Z = forward_features(model, rest.inputs)
gap = np.max(np.abs(merged.apply(Z) - esc_apply(second, esc_apply(first, Z))))
print(f"merged vs sequential max difference: {gap:.2e}")
for name, data in (("class 0", first_class), ("class 1", second_class), ("others", rest)):
    print(f"{name:<8} before {accuracy(model, data):6.2f}  after {accuracy(model, data, merged):6.2f}")
