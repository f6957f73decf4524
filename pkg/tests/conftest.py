import functools
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mpuindex import (
    brick_layer,
    build_circuit,
    controlled_phase,
    load_fixture,
    product_unitary,
    random_local_unitary,
    reduce_to_injective,
    translation_left,
    translation_right,
    two_body_layer,
)
from mpuindex.mpo import cell_tensor

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.load_profile("default")

HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def builder_mpuos():
    """Every elementary builder MPUO, keyed by a short name, with its light-cone radius."""
    out = {
        "product": (product_unitary(HADAMARD), 0),
        "product_d3": (product_unitary(random_local_unitary(3, 1, 11)), 0),
        "cp": (controlled_phase(), 1),
        "right_d2": (translation_right(2), 1),
        "left_d2": (translation_left(2), 1),
        "right_d3": (translation_right(3), 1),
        "two_body": (two_body_layer(random_local_unitary(2, 2, 5)), 1),
    }
    for k in (2, 3):
        for off in range(k):
            out[f"brick{k}_off{off}"] = (brick_layer(random_local_unitary(2, k, 7 + k), 2, k, off), k - 1)
    return out


@pytest.fixture(scope="session")
def builders():
    return builder_mpuos()


@functools.lru_cache(maxsize=None)
def circuit(name):
    return build_circuit(load_fixture(name))


@functools.lru_cache(maxsize=None)
def reduced_cell(name):
    return reduce_to_injective(cell_tensor(circuit(name)))


# acceptance summary: tests marked criterion(n) report one line per criterion

_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if hasattr(report, "wasxfail"):
            _outcomes[marker].append("xfail")
        else:
            _outcomes[marker].append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        results = _outcomes[n]
        status = "PASS" if all(r == "passed" for r in results) else "FAIL"
        detail = ", ".join(f"{results.count(k)} {k}" for k in ("passed", "failed", "xfail", "skipped") if results.count(k))
        terminalreporter.write_line(f"criterion {n:>2}: {status}  ({detail})")
