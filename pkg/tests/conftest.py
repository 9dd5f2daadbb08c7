import re

_ACCEPTANCE: dict[str, str] = {}
_PATTERN = re.compile(r"test_(a\d+)")


def pytest_runtest_makereport(item, call):
    if call.when != "call" or "test_acceptance" not in str(item.fspath):
        return
    m = _PATTERN.search(item.name)
    if not m:
        return
    key = m.group(1).upper()
    outcome = "FAIL" if call.excinfo is not None else "PASS"
    # a criterion split over several tests fails if any part fails
    if _ACCEPTANCE.get(key) != "FAIL":
        _ACCEPTANCE[key] = outcome
    elif outcome == "FAIL":
        _ACCEPTANCE[key] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k[1:])):
        terminalreporter.write_line(f"{key} {_ACCEPTANCE[key]}")
