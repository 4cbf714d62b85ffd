import pytest

CRITERIA: dict[str, tuple[bool, str]] = {}


class Recorder:
    """Collects one pass/fail line per acceptance criterion."""

    def __call__(self, name: str, passed: bool, detail: str) -> None:
        CRITERIA[name] = (bool(passed), detail)


@pytest.fixture(scope="session")
def record_criterion():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(CRITERIA, key=lambda k: (int(k.split()[0].rstrip("ab")), k)):
        ok, detail = CRITERIA[name]
        terminalreporter.write_line(f"CRITERION {name}: {'PASS' if ok else 'FAIL'}  {detail}")
