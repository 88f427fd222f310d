"""Acceptance reporting: one pass/fail line per numbered criterion."""

import pytest

_RESULTS: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    entry = _RESULTS.setdefault(num, {"title": title, "status": [], "notes": []})
    if rep.when == "call" or rep.outcome != "passed":
        if hasattr(rep, "wasxfail"):
            entry["status"].append("xfail")
            entry["notes"].append(rep.wasxfail)
        else:
            entry["status"].append(rep.outcome)
            if rep.outcome == "skipped" and isinstance(rep.longrepr, tuple):
                entry["notes"].append(rep.longrepr[2])


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_RESULTS):
        e = _RESULTS[num]
        st = e["status"]
        if st and all(s == "passed" for s in st):
            verdict = "PASS"
        elif any(s in ("failed", "xfail") for s in st):
            verdict = "FAIL"
        else:
            verdict = "NOT RUN"
        note = f" ({'; '.join(dict.fromkeys(e['notes']))})" if e["notes"] else ""
        tr.write_line(f"criterion {num:2d}: {verdict}  {e['title']}{note}")
