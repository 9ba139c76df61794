import pytest

_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, name): acceptance criterion checked by this test")


@pytest.fixture
def detail(request):
    """Mutable list; strings appended here are shown next to the PASS/FAIL line."""
    request.node._detail = []
    return request.node._detail


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    n, name = mark.args
    status = "PASS" if rep.passed else "FAIL"
    _RESULTS[n] = (status, name, "; ".join(getattr(item, "_detail", [])))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, name, info = _RESULTS[n]
        terminalreporter.write_line(f"[{status}] criterion {n}: {name}" + (f" ({info})" if info else ""))
