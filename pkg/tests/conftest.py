import pytest

from seqtrial import TwoStageOutcome, musec_data, musec_design
from seqtrial.datasets import data_path


@pytest.fixture(scope="session")
def data():
    return musec_data()


@pytest.fixture(scope="session")
def design():
    return musec_design()


@pytest.fixture(scope="session")
def outcome(data, design):
    return TwoStageOutcome.from_data(data, design)


@pytest.fixture(scope="session")
def data_file():
    return str(data_path("musec_data.json"))


@pytest.fixture(scope="session")
def design_file():
    return str(data_path("musec_design.json"))


_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash[_LINES]

    def record(criterion, checks):
        failed = [name for name, ok, _ in checks if not ok]
        detail = "; ".join(f"{name}: {shown}" for name, _, shown in checks)
        line = f"criterion {criterion}: {'FAIL' if failed else 'PASS'} ({detail})"
        lines.append(line)
        print(line)
        return failed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
