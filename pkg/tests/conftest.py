import pytest

from stablescore.serving import ScoringService, ServiceSettings
from support import example_snapshot


@pytest.fixture
def service(tmp_path):
    svc = ScoringService(example_snapshot(), ServiceSettings(sink_path=str(tmp_path / "sink.jsonl")))
    svc.warmup(0)
    yield svc
    svc.close()


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
