import pytest

# criterion number -> (status, detail), filled while the acceptance suite runs
RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        n = marker.args[0]
        if rep.skipped:
            status, detail = "SKIP", str(rep.longrepr[2]) if isinstance(rep.longrepr, tuple) else ""
        else:
            status, detail = ("PASS" if rep.passed else "FAIL"), getattr(item, "criterion_detail", "")
        RESULTS[n] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(RESULTS):
        status, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")


@pytest.fixture
def report(request):
    """Record the measured values behind a criterion; printed at the end of the run."""

    def record(detail: str) -> None:
        request.node.criterion_detail = detail
        print(f"criterion {request.node.get_closest_marker('criterion').args[0]}: {detail}")

    return record
