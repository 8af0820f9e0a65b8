import contextlib
import time

import pytest

_RESULTS: dict[str, tuple[str, float, str]] = {}


@contextlib.contextmanager
def _record(label: str, budget: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        _RESULTS[label] = ("FAIL", time.perf_counter() - start, str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
        raise
    elapsed = time.perf_counter() - start
    if elapsed >= budget:
        _RESULTS[label] = ("FAIL", elapsed, f"runtime {elapsed:.2f}s over the {budget:g}s budget")
        pytest.fail(f"{label}: runtime {elapsed:.2f}s exceeds {budget:g}s")
    _RESULTS[label] = ("PASS", elapsed, "")


@pytest.fixture
def criterion():
    """``with criterion("label", budget_seconds): ...`` records a PASS/FAIL line."""
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_RESULTS):
        status, elapsed, why = _RESULTS[label]
        line = f"{status} {label} ({elapsed:.2f}s)"
        if why:
            line += f": {why}"
        terminalreporter.write_line(line)
