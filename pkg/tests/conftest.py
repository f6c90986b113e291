import numpy as np
import pytest

from sdce.market import ElasticitySchedule

# criterion -> {part: (passed, detail)}; filled by test_acceptance
ACCEPTANCE: dict = {}


def record(criterion: int, part: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, {})[part] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[key]
        ok = all(p for p, _ in parts.values())
        detail = "; ".join(f"{name}: {'ok' if p else 'FAILED'} ({d})" for name, (p, d) in parts.items())
        tr.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sched():
    return ElasticitySchedule()
