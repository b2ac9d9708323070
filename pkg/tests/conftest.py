import pytest

_RESULTS: list[tuple[str, bool, str]] = []


class _Criterion:
    """Records one acceptance line and fails the test if the check failed."""

    def __call__(self, name: str, ok: bool, detail: str = "") -> None:
        ok = bool(ok)
        line = f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        _RESULTS.append((name, ok, detail))
        print(line)
        assert ok, line


@pytest.fixture
def criterion():
    return _Criterion()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
