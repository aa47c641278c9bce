import os
from pathlib import Path

import numpy as np
import pytest

from tronlinear import FeatureMatrix, ProblemInstance

DATA = Path(__file__).parent / "data"
CORPUS_DIR = os.environ.get("TRONLINEAR_CORPUS_DIR")

_criteria = {}


def dense_problem(rng, l, n, C=1.0, sparse=False):
    X = rng.standard_normal((l, n))
    if sparse:
        X[rng.random((l, n)) < 0.6] = 0.0
    y = np.where(rng.random(l) < 0.5, -1.0, 1.0)
    fm = FeatureMatrix.from_scipy(X) if sparse else FeatureMatrix.dense(X)
    return ProblemInstance(fm, y, C)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def data_dir():
    return DATA


def pytest_collection_modifyitems(config, items):
    for item in items:
        if "corpus" in item.keywords and not CORPUS_DIR:
            item.add_marker(pytest.mark.skip(
                reason="set TRONLINEAR_CORPUS_DIR to run corpus checks"))


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    entry = _criteria.setdefault(number, {"title": title, "failed": False,
                                          "ran": 0, "skipped": 0})
    if report.failed:
        entry["failed"] = True
    elif report.skipped:
        entry["skipped"] += 1
    elif report.when == "call":
        entry["ran"] += 1


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        if e["failed"]:
            status = "FAIL"
        elif e["ran"]:
            status = "PASS"
        else:
            status = "SKIP"
        note = f" ({e['skipped']} opt-in check(s) skipped)" if e["skipped"] else ""
        terminalreporter.write_line(
            f"criterion {number:>2}: {status}  {e['title']}{note}")
