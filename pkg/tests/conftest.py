import pytest

# criterion number -> list of (ok, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        entries = ACCEPTANCE[crit]
        ok = all(e[0] for e in entries)
        details = "; ".join(e[1] for e in entries)
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} - {details}")
