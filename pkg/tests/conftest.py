"""Collects acceptance checks and prints one verdict line per criterion."""

from collections import OrderedDict

import pytest

_CHECKS = OrderedDict()


class _Recorder:
    def __call__(self, criterion: int, label: str, ok: bool, detail: str = "") -> bool:
        _CHECKS.setdefault(criterion, []).append((label, bool(ok), detail))
        return bool(ok)


@pytest.fixture(scope="session")
def record():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _CHECKS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_CHECKS):
        checks = _CHECKS[crit]
        ok = all(c[1] for c in checks)
        failed = [c[0] for c in checks if not c[1]]
        line = f"criterion {crit}: {'PASS' if ok else 'FAIL'} ({len(checks)} checks"
        line += ")" if ok else f", failing: {'; '.join(failed)})"
        tr.write_line(line)
    tr.write_line("")
    for crit in sorted(_CHECKS):
        for label, ok, detail in _CHECKS[crit]:
            tr.write_line(f"  [{crit}] {'pass' if ok else 'FAIL'}  {label}  {detail}")
