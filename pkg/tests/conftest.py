import pytest

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_line(request):
    """Print a one-line verdict and keep it for the end-of-run summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def emit(text):
        print(text)
        lines.append(text)

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
