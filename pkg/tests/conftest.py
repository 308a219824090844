import contextlib

import pytest

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion for the terminal summary."""

    @contextlib.contextmanager
    def record(number: int, title: str):
        try:
            yield
        except BaseException as e:
            _ACCEPTANCE[number] = ("FAIL", title, f"{type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}")
            raise
        else:
            _ACCEPTANCE[number] = ("PASS", title, "")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[number]
        line = f"[{status}] criterion {number}: {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
