"""Shared test plumbing: the acceptance checks register one line each and
the summary hook prints them as a block at the end of the run."""

ACCEPTANCE = {}


def record_acceptance(num, name, ok, detail):
    ACCEPTANCE[num] = (name, bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(
            "[%2d] %s  %-28s %s" % (num, "PASS" if ok else "FAIL", name, detail))
