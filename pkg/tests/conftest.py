import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request, capsys):
    """Call ``criterion(n, ok, detail)`` to log a PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_KEY, [])

    def log(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((n, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
