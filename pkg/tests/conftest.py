from collections import defaultdict

import pytest

# criterion number (or label for checks outside the numbered list) -> [(check, passed, detail)]
_ACCEPTANCE = defaultdict(list)


@pytest.fixture(scope="session")
def acceptance_record():
    def record(criterion, name: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE[criterion].append((name, bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE, key=lambda c: (isinstance(c, str), str(c))):
        checks = _ACCEPTANCE[crit]
        ok = all(p for _, p, _ in checks)
        failed = [f"{n} ({d})" for n, p, d in checks if not p]
        tail = "; ".join(failed) if failed else f"{len(checks)} checks"
        label = f"criterion {crit}" if isinstance(crit, int) else crit
        tr.write_line(f"{label}: {'PASS' if ok else 'FAIL'}  {tail}")
