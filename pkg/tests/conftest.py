"""Shared pytest hooks: acceptance criteria report one PASS/FAIL line each in the terminal summary."""

import pytest

_VERDICTS: dict[str, tuple[bool, str]] = {}


class Verdict:
    """Records a criterion outcome; the test still asserts so pytest's own status matches."""

    def __init__(self, key: str, title: str):
        self.key = key
        self.title = title

    def __call__(self, ok: bool, detail: str = "") -> None:
        _VERDICTS[self.key] = (bool(ok), f"{self.title}: {detail}" if detail else self.title)
        line = f"{self.key} {'PASS' if ok else 'FAIL'} {_VERDICTS[self.key][1]}"
        print(line)
        assert ok, line


@pytest.fixture
def verdict(request):
    marker = request.node.get_closest_marker("criterion")
    key, title = marker.args
    return Verdict(key, title)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key, title): acceptance criterion with a one-line verdict")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" or report.passed:
        return
    key, title = marker.args
    if key not in _VERDICTS:
        _VERDICTS[key] = (False, f"{title}: error {call.excinfo.typename}: {call.excinfo.value}")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: int(k[1:])):
        ok, text = _VERDICTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'} {text}")
