import pytest
from hypothesis import settings

from iwts.scenario import load_scenario
from iwts.simulation import Simulation

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def bundled_config():
    return load_scenario("paper-week.json")


@pytest.fixture(scope="session")
def bundled_sim(bundled_config):
    sim = Simulation(bundled_config)
    sim.run()
    return sim


# -- acceptance verdict lines ---------------------------------------------------

_verdicts: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    ok = _verdicts.get(number, (title, True))[1] and not rep.failed
    _verdicts[number] = (title, ok)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        title, ok = _verdicts[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}")
