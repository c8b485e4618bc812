import sys


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance suite's one-line-per-criterion verdicts."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
