import pytest

_VERDICTS = []


class Verdict:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self, label):
        self.label = label
        self.detail = ""

    def note(self, text):
        self.detail = text


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    v = Verdict(marker.args[0] if marker else request.node.name)
    yield v
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    _VERDICTS.append((v.label, ok, v.detail))
    print(f"\n[{'PASS' if ok else 'FAIL'}] {v.label}  {v.detail}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(_VERDICTS):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
