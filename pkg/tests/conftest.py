from __future__ import annotations

import time

import pytest

from esc_unlearn.pipeline import DeskSetup, prepare

DESK_SEEDS = (0, 1, 2)

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


class DeskRuns(list):
    """(seed, split, model, history) per seed, plus the wall time spent training."""

    seconds: float = 0.0


@pytest.fixture(scope="session")
def desk():
    """Default desk setup (10 blobs, forget class 0) trained once per seed."""
    setup = DeskSetup()
    runs = DeskRuns()
    t0 = time.perf_counter()
    for seed in DESK_SEEDS:
        split, model, history = prepare(setup, seed)
        runs.append((seed, split, model, history))
    runs.seconds = time.perf_counter() - t0
    return runs


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
