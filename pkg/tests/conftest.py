import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from battmdp.data_io import SyntheticLoadSpec, generate_synthetic, split_train_test  # noqa: E402
from battmdp.pipeline import demand_chain  # noqa: E402
from battmdp.quantile_fourier import fit_quantile_set  # noqa: E402

_ACCEPTANCE: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = getattr(report, "acceptance_number", None)
    if number is not None:
        _ACCEPTANCE.setdefault(number, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result().acceptance_number = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok = all(o == "passed" for o in _ACCEPTANCE[number])
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}")


@pytest.fixture(scope="session")
def two_years():
    return generate_synthetic(SyntheticLoadSpec(n_days=730))


@pytest.fixture(scope="session")
def train_test(two_years):
    return split_train_test(two_years)


@pytest.fixture(scope="session")
def qset(train_test):
    return fit_quantile_set(train_test[0])


@pytest.fixture(scope="session")
def demand(qset, train_test):
    return demand_chain(qset, train_test[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
