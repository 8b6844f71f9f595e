import pytest

# (criterion, passed, detail) rows recorded by the acceptance suite
ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion; the test sets ``row['detail']`` as it goes."""
    name = request.node.get_closest_marker("criterion").args[0]
    row = {"name": name, "detail": ""}
    yield row
    rep = getattr(request.node, "rep_call", None)
    passed = rep is not None and rep.passed
    ACCEPTANCE.append((name, passed, row["detail"]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion recorded in the summary")
    config.addinivalue_line("markers", "slow: long end-to-end runs")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else ""))
