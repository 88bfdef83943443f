import pytest

REPORT_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[REPORT_KEY] = []


@pytest.fixture
def report(request):
    """Record one acceptance line: report(criterion, passed, detail)."""
    lines = request.config.stash[REPORT_KEY]

    def add(criterion, passed, detail=""):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        lines.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(REPORT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
