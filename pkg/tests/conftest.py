import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    deadline=None,
    max_examples=40,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance criteria bookkeeping ----------------------------------------------------

_CRITERIA = pytest.StashKey[list]()


class _Criterion:
    """Times a block, enforces its runtime budget and records one pass/fail line."""

    def __init__(self, config, number: int, title: str, budget: float):
        self.config, self.number, self.title, self.budget = config, number, title, budget
        self.detail = ""

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        ok = exc_type is None and elapsed < self.budget
        why = self.detail
        if exc_type is not None:
            why = f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        elif not ok:
            why = f"took {elapsed:.2f} s, budget {self.budget:g} s"
        line = (f"criterion {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title}  "
                f"({elapsed:.2f} s / {self.budget:g} s)  {why}").rstrip()
        print(line)
        self.config.stash.setdefault(_CRITERIA, []).append(line)
        if exc_type is None and not ok:
            raise AssertionError(why)
        return False


@pytest.fixture
def criterion(request):
    def make(number: int, title: str, budget: float) -> _Criterion:
        return _Criterion(request.config, number, title, budget)

    return make


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
