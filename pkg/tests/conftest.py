import math
import warnings

import pytest
from hypothesis import HealthCheck, settings

# Seeded, reproducible property runs.
settings.register_profile("repo", derandomize=True, deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(autouse=True)
def _quiet_numerics():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


INF = math.inf


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion: criterion(n, ok, detail)."""
    results = request.config.stash.setdefault(_CRITERIA, {})

    def record(number: int, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        results[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
