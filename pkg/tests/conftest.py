import numpy as np
import pytest

import prunelab as pl


@pytest.fixture(autouse=True)
def float64_mode():
    # oracle and gradient tests run in 64-bit; individual tests opt into f32
    pl.set_arithmetic_mode("float64")
    yield
    pl.set_arithmetic_mode("float64")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_runtest_logreport(report):
    if report.when == "call" and report.nodeid.split("::")[0].endswith("test_acceptance.py"):
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {name}: {outcome}", flush=True)
