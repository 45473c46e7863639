import pytest

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion.

    Use as ``with criterion(n, "name") as note:``; ``note(text)`` attaches a
    detail string printed in the summary.
    """
    from contextlib import contextmanager

    @contextmanager
    def record(number: int, name: str):
        details: list[str] = []
        try:
            yield details.append
        except BaseException:
            ACCEPTANCE[number] = (name, False, "; ".join(details))
            raise
        ACCEPTANCE[number] = (name, True, "; ".join(details))

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[number]
        line = f"[{number}] {'PASS' if ok else 'FAIL'} {name}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
