from __future__ import annotations

import pytest

from toscaorch.parser import DATA_DIR, ImportResolver, check_template

TEMPLATES = DATA_DIR / "templates"
PROVIDERS = DATA_DIR / "providers"
SCENARIOS = DATA_DIR / "scenarios"


def fixture_text(name: str) -> str:
    return (TEMPLATES / name).read_text(encoding="utf-8")


def graph_of(text: str, inputs=None):
    graph, report = check_template(text, ImportResolver.default(), inputs)
    assert report.ok, report.lines()
    return graph


@pytest.fixture
def powerfit_text() -> str:
    return fixture_text("powerfit.yaml")


@pytest.fixture
def mesos_text() -> str:
    return fixture_text("mesos_elastic_cluster.yaml")


@pytest.fixture
def server_text() -> str:
    return fixture_text("my_server.yaml")


# -- acceptance summary --------------------------------------------------------

_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    number, title = marker
    _CRITERIA.setdefault(number, (title, []))[1].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        verdict = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")
