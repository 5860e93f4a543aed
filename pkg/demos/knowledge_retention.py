"""Check whether forgotten knowledge is still linearly readable from the features.

A fresh linear head is trained on the frozen features of each model. A high
probed forget accuracy means the class is hidden by the head, not removed.
"""

from __future__ import annotations

from esc_unlearn.metrics import ProbeConfig, kr_probe, recovery_rate
from esc_unlearn.pipeline import DeskSetup, prepare, unlearn

SEED = 0

split, model, _ = prepare(DeskSetup(), SEED)
original = kr_probe(model, split, None, ProbeConfig(seed=SEED))
print(f"original  probed forget {original.acc_f:6.2f}")

for method in ("esc", "esc-t", "ng", "rl"):
    result = unlearn(method, model, split, seed=SEED)
    hook = result.transform.matrix if result.transform is not None else None
    probed = kr_probe(result.model, split, hook, ProbeConfig(seed=SEED))
    rate = recovery_rate(probed.acc_f, 100.0)
    print(f"{method:<8}  probed forget {probed.acc_f:6.2f}  recovery {rate:.3f}")
