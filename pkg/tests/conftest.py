import numpy as np
import pytest

from sexalloc.data import PRIMARY, Dataset
from sexalloc.likelihood import PriorConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def priors():
    return PriorConfig(sigma_psi=1.0, lam_shape=6.0, lam_rate=1.0, d_a=2.0, d_b=8.0)


@pytest.fixture
def small_secondary():
    return Dataset(np.array([2, 5, 7, 6, 5, 10]), np.array([1, 1, 3, 1, 2, 2]))


@pytest.fixture
def small_primary():
    return Dataset(np.array([4, 6, 5, 8, 3, 7]), np.array([1, 2, 1, 2, 1, 2]), mode=PRIMARY)


@pytest.fixture
def empty_secondary():
    return Dataset(np.zeros(0, np.int64), np.zeros(0, np.int64))


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""

    def record(k: int, ok: bool | None, detail: str) -> bool | None:
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"CRITERION {k}: {status} | {detail}"
        _CRITERIA[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
