import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trackrd.data_model import RDSample

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_sample(rng: np.random.Generator, n: int = 400, bandwidth: int = 3, pi: float = 0.4) -> RDSample:
    """Window sample with a first-stage jump of roughly ``pi`` and covariates."""
    r = rng.integers(-bandwidth, bandwidth, size=n)
    r[:2] = [-bandwidth, -1]
    r[2:4] = [0, bandwidth - 1]
    z = r >= 0
    p1 = 0.1 + pi * z + 0.01 * r
    H1 = (rng.random(n) < np.clip(p1, 0, 1)).astype(float)
    H4 = (rng.random(n) < 0.3 + 0.4 * H1).astype(float)
    covs = {"girl": (rng.random(n) < 0.5).astype(float), "income": rng.lognormal(11, 0.5, n)}
    return RDSample(cutoff=537, bandwidth=bandwidth, r=r, H1=H1, H4=H4, covariates=covs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
