import numpy as np
import pytest

from spinexpand import benzene_preset
from spinexpand.experiment import SequenceParams, prepare_pseudopure


@pytest.fixture(scope="session")
def benzene():
    return benzene_preset(-560.0)


@pytest.fixture(scope="session")
def seq():
    return SequenceParams()


@pytest.fixture(scope="session")
def ideal_pseudopure(benzene, seq):
    return prepare_pseudopure(benzene, "ideal", seq)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_hermitian(rng, dim, traceless=False):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = (a + a.conj().T) / 2
    if traceless:
        h -= np.trace(h) / dim * np.eye(dim)
    return h


def random_unitary(rng, dim):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


# one line per acceptance criterion, printed at the end of every run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
