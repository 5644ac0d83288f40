import numpy as np
import pytest

from stochmf.model import hubbard_chain, random_model
from stochmf.noise import decompose


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def dimer():
    return hubbard_chain(2, 1.0, 1.0)


@pytest.fixture(scope="session")
def dimer_dec(dimer):
    return decompose(dimer)


@pytest.fixture(scope="session")
def rand_model():
    return random_model(5, 3, seed=11, coupling_scale=0.4)



ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line, then assert on it."""

    def _report(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
