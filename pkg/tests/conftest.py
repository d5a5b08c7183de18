import pytest

from medmatch.mock_wos import Corpus, serve_corpus

_criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = marker.args[0]
        callspec = getattr(item, "callspec", None)
        if callspec is not None:
            name += f" [{callspec.id}]"
        _criteria.append((name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _criteria:
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{tag}] {name}")


@pytest.fixture
def mock_wos():
    """Factory: mock_wos(corpus, faults=None, **kw) -> running server, stopped at teardown."""
    servers = []

    def start(corpus, faults=None, **kwargs):
        if isinstance(corpus, int):
            corpus = Corpus.synthetic(corpus, seed=corpus)
        server = serve_corpus(corpus, faults, **kwargs)
        servers.append(server)
        return server

    yield start
    for s in servers:
        s.stop()
