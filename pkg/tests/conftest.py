import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed
    if report.when == "call" or failed:
        entry = _results.setdefault(number, {"title": title, "ok": True, "detail": ""})
        entry["ok"] = entry["ok"] and not failed
        if report.when == "call":
            entry["detail"] = dict(item.user_properties).get("detail", "")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        r = _results[number]
        status = "PASS" if r["ok"] else "FAIL"
        detail = f"  [{r['detail']}]" if r["detail"] else ""
        terminalreporter.write_line(f"criterion {number:>2} {status}  {r['title']}{detail}")
