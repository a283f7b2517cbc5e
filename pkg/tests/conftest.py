import pytest

# criterion id -> list of (label, passed, detail); filled by the acceptance suite
ACCEPTANCE = {}


@pytest.fixture
def record():
    def _record(criterion, label, passed, detail):
        ACCEPTANCE.setdefault(criterion, []).append((label, bool(passed), detail))
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in checks)
        parts = "; ".join(f"{label}: {detail} [{'ok' if p else 'FAIL'}]" for label, p, detail in checks)
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {crit}  {parts}")
