import pytest

_VERDICTS: list[str] = []


class Verdicts:
    """Collects one line per acceptance criterion, shown at the end of the run."""

    def check(self, number: int, title: str, ok: bool, detail: str) -> None:
        _VERDICTS.append(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        print(_VERDICTS[-1])
        assert ok, detail


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
