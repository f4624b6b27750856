import numpy as np
import pytest

from magswim.model import compute_spectrum, helix_model, isotropic_model


@pytest.fixture(scope="session")
def helix():
    return helix_model()


@pytest.fixture(scope="session")
def helix_spec(helix):
    return compute_spectrum(helix)


@pytest.fixture(scope="session")
def iso():
    return isotropic_model()


@pytest.fixture(scope="session")
def iso_spec(iso):
    return compute_spectrum(iso)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict, print it and assert it."""

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
