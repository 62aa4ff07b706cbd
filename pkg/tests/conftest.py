import sys


def pytest_terminal_summary(terminalreporter):
    results = []
    for mod in list(sys.modules.values()):
        results.extend(getattr(mod, "ACCEPTANCE_RESULTS", None) or [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(results):
        terminalreporter.write_line(line)
