"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    if call.when != "call" or not item.name.startswith("test_criterion_"):
        return
    number = int(item.name.split("_")[2])
    detail = dict(item.user_properties).get("detail", "")
    ok = call.excinfo is None
    if not ok and not detail:
        detail = str(call.excinfo.value).splitlines()[0][:160] if str(call.excinfo.value) else "failed"
    _CRITERIA[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
