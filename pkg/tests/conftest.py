import numpy as np
import pytest

from ransomdet.dataset import synth_generate

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def synth_small():
    return synth_generate(60, seed=3)


@pytest.fixture(scope="session")
def synth_csv(tmp_path_factory, synth_small):
    path = tmp_path_factory.mktemp("data") / "synth.csv"
    synth_small.to_csv(path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    criterion = dict(report.user_properties).get("criterion")
    if criterion is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = dict(report.user_properties).get("detail", "")
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _ACCEPTANCE[criterion] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0])):
        status, detail = _ACCEPTANCE[key]
        line = f"{status:4s}  {key}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
