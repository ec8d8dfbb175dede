import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_labels(rng, shape, n_labels, p_background=0.2):
    lab = rng.integers(1, n_labels + 1, size=shape)
    lab[rng.random(shape) < p_background] = 0
    return lab


def blocky_labels(rng, shape, n_labels, block=(2, 2, 1)):
    """Random labels constant on small blocks, so objects are bigger than single voxels."""
    coarse = [-(-s // b) for s, b in zip(shape, block)]
    lab = rng.integers(0, n_labels + 1, size=coarse)
    for ax, b in enumerate(block):
        lab = np.repeat(lab, b, axis=ax)
    return lab[: shape[0], : shape[1], : shape[2]]


# one summary line per acceptance criterion, printed after the run
_criteria: dict = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_c"):
        return
    n = int(name[6:8])
    if report.when == "call" or report.failed:
        detail = dict(report.user_properties).get("detail", "")
        ok = report.passed and _criteria.get(n, ("PASS",))[0] == "PASS"
        _criteria[n] = ("PASS" if ok else "FAIL", detail, name)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        verdict, detail, name = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}  {verdict}  {name}: {detail}")
