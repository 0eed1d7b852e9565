import numpy as np
import pytest

from uwrsense.core import NoiseCovariance
from uwrsense.sense import EncodingOperator
from uwrsense.simulator import AcquisitionSpec, acquire, correlated_cov, head_phantom, make_coils, make_phantom, make_series


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_hpd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(crandn(rng, n, n))
    ev = np.exp(rng.uniform(0, np.log(cond), n))
    return (q * ev) @ q.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_problem():
    """Noiseless 16x16x8, L=4, R=2, 8-frame problem with exact sensitivities."""
    dims = (16, 16, 8)
    base = make_phantom(head_phantom(dims, seed=7))
    coils = make_coils(dims, 4, seed=7, R=2, support=np.abs(base) > 0)
    acq = AcquisitionSpec(coils=4, R=2, frames=8, psi_true=None, drift=0.02, seed=7)
    series = make_series(base, acq)
    d = acquire(series, coils, acq)
    enc = EncodingOperator.from_sens(coils, 2)
    psi = NoiseCovariance(correlated_cov(4, 30.0))
    return series, d, enc, psi


# one line per acceptance criterion, shown at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
