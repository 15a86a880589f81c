import time

import numpy as np
import pytest

from canaltrace.phantom import PhantomConfig, make_phantom
from canaltrace.postprocess import PipelineParams, run_pipeline

ACCEPTANCE_SEEDS = range(20)

_criteria: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when != "call" and not rep.failed:
        return
    number, title = marker.args
    ok = rep.passed and rep.when == "call"
    prev = _criteria.get(number)
    _criteria[number] = (title, ok if prev is None else prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}  {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def phantom_runs():
    """Default-config phantoms for the acceptance seeds, with pipeline output and timing."""
    runs = []
    t0 = time.perf_counter()
    for seed in ACCEPTANCE_SEEDS:
        ph = make_phantom(PhantomConfig(seed=seed))
        res = run_pipeline(ph.prediction, PipelineParams(), keep_steps=False)
        runs.append((ph, res))
    return runs, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
