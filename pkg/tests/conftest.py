"""Shared pytest plumbing: the acceptance suite reports one line per criterion."""

import pytest

_ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def report():
    """``report(criterion, ok, detail)`` records one checked part of a criterion."""

    def _record(criterion: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[crit]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{'ok' if ok else 'FAILED'}: {d}" for ok, d in parts)
        terminalreporter.write_line(f"criterion {crit}: {status} | {detail}")
