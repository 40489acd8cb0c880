import pytest

_results: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): numbered acceptance criterion")


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the acceptance report."""
    def add(text: str):
        request.node.user_properties.append(("detail", text))
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    n, title = mark.args
    text = "; ".join(v for k, v in item.user_properties if k == "detail")
    prev = _results.get(n)
    passed = rep.passed and (prev is None or prev[1])
    _results[n] = (title, passed, text)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        title, passed, text = _results[n]
        status = "PASS" if passed else "FAIL"
        line = f"ACC{n:>2} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{text}]" if text else ""))
