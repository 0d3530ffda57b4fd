import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_results = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        n = int(m.group(1))
        detail = dict(report.user_properties).get("detail", "")
        if report.failed and not detail:
            lines = [ln for ln in str(report.longrepr).splitlines() if ln.startswith("E ")]
            detail = lines[-1][1:].strip() if lines else "error"
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _results[n] = (m.group(2).replace("_", " "), status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        name, status, detail = _results[n]
        terminalreporter.write_line(f"criterion {n} [{status}] {name}: {detail}")
