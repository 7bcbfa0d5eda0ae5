import pytest

# criterion number -> (title, passed, detail); filled by the acceptance tests
_RESULTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def report(request):
    """Attach a one-line measurement summary to the running acceptance test."""

    def _report(detail: str):
        request.node.user_properties.append(("detail", detail))

    return _report


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        number, title = marker.args[0], marker.kwargs.get("title", item.name)
        detail = "; ".join(v for k, v in item.user_properties if k == "detail")
        if rep.failed and not detail:
            detail = str(rep.longrepr).strip().splitlines()[-1]
        _RESULTS[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, passed, detail = _RESULTS[number]
        line = f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
