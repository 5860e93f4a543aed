"""Full comparison table over three seeds: accuracy, HM, MIA, ZRF, KR and time."""

from __future__ import annotations

from esc_unlearn.pipeline import METHODS, DeskSetup, mean_of, run_desk

SEEDS = (0, 1, 2)
COLUMNS = ("acc_f", "acc_r", "acc_ft", "acc_rt", "hm", "mia", "zrf", "seconds")

reports = run_desk(DeskSetup(), SEEDS)
print(f"{'method':<9}" + "".join(f"{c:>9}" for c in COLUMNS) + f"{'kr':>9}")
for method in ("original",) + METHODS:
    rows = reports[method]
    cells = []
    for column in COLUMNS:
        if all(getattr(r, column) is None for r in rows):
            cells.append(f"{'-':>9}")
            continue
        value = mean_of(rows, column)
        cells.append(f"{value:9.4f}" if column == "seconds" else f"{value:9.2f}")
    kr = sum(r.kr.acc_f for r in rows) / len(rows)
    print(f"{method:<9}" + "".join(cells) + f"{kr:9.2f}")
