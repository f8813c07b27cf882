import contextlib

ACCEPTANCE = {}


@contextlib.contextmanager
def criterion(number, name):
    """Record PASS/FAIL for an acceptance criterion, re-raising any failure."""
    try:
        yield
    except BaseException:
        ACCEPTANCE[number] = (name, "FAIL")
        raise
    ACCEPTANCE[number] = (name, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, verdict = ACCEPTANCE[number]
        terminalreporter.write_line(f"{verdict} criterion {number}: {name}")
