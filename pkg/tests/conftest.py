import pytest

from gwedges.model import BirthDeathParams, ModelParams, OffspringDistribution


@pytest.fixture
def yule():
    return ModelParams(1.0, OffspringDistribution((0.0, 0.0, 1.0), "yule"))


@pytest.fixture
def bd():
    return BirthDeathParams(1.0, 0.5)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Record one acceptance line: ``record_criterion(n, passed, detail)``."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number: int, passed: bool, detail: str) -> None:
        lines.append((number, passed, detail))

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
