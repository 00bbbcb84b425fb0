from __future__ import annotations

import numpy as np
import pytest

from sievei.data_io import Dataset
from sievei.dgp import DGPSpec, gen_dgp


def random_dataset(n: int, seed: int = 0, dx: int = 1) -> Dataset:
    """Endogenous linear-ish sample on [-1, 1] for small algebraic checks."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, dx))
    v = rng.normal(size=n)
    y2 = np.tanh(x[:, 0] + 0.5 * v)
    y1 = np.sin(2 * y2) + 0.3 * v + 0.2 * rng.normal(size=n)
    return Dataset(y1, y2, x)


@pytest.fixture
def small_data() -> Dataset:
    return random_dataset(12, seed=3)


@pytest.fixture(scope="session")
def npiv_sample() -> Dataset:
    return gen_dgp(DGPSpec("npiv", 400, seed=11), np.random.default_rng(11))


@pytest.fixture(scope="session")
def npqiv_sample() -> Dataset:
    return gen_dgp(DGPSpec("npqiv", 300, 0.5, seed=5), np.random.default_rng(5))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(criterion: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
