import pytest

from fadc.toyseg.train import TrainConfig, run

_RUNS: dict[TrainConfig, object] = {}
CRITERIA: list[str] = []


def cached_run(cfg: TrainConfig):
    """Training runs are deterministic, so one run per config serves every test."""
    if cfg not in _RUNS:
        _RUNS[cfg] = run(cfg)
    return _RUNS[cfg]


@pytest.fixture
def record():
    def _record(number, name, passed, detail=""):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        print(line)
        CRITERIA.append(line)
    return _record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
