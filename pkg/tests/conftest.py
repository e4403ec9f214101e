from collections import defaultdict

import pytest

# criterion number -> list of (passed, detail) from its parts
_RESULTS: dict[int, list[tuple[bool, str]]] = defaultdict(list)


@pytest.fixture
def record():
    """Store one acceptance check; the terminal summary prints one line per criterion."""

    def _record(criterion: int, passed: bool, detail: str) -> bool:
        _RESULTS[criterion].append((bool(passed), detail))
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_RESULTS):
        parts = _RESULTS[n]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
