import numpy as np
import pytest

from stealthbound import cli, safety
from stealthbound.config import RunConfig
from stealthbound.lmi import InvarianceCertificate, RateCertificate


@pytest.fixture(scope="session")
def tank():
    """Certified quadruple-tank pipeline with the shipped default settings."""
    return cli.run_pipeline(RunConfig())


@pytest.fixture(scope="session")
def tank_bounds(tank):
    return safety.bound_curve(tank.rate, tank.inv, tank.spec, 100)


def random_spd(rng, n, floor=0.1):
    M = rng.standard_normal((n, n))
    return M @ M.T + floor * np.eye(n)


def random_stable(rng, n, radius=0.9):
    M = rng.standard_normal((n, n))
    return radius * M / max(abs(np.linalg.eigvals(M)))


def random_instance(seed, dim=4):
    rng = np.random.default_rng(seed)
    P1 = random_spd(rng, dim, 0.2)
    P2 = random_spd(rng, dim, 0.2) * rng.uniform(0.5, 5.0)
    gamma = rng.uniform(0.05, 0.95)
    gamma_a = gamma * rng.uniform(1.01, 4.0)
    p = rng.uniform(0.5, 0.999)
    rate = RateCertificate(P1, gamma, gamma_a, 0.1)
    inv = InvarianceCertificate(P2, 0.1, p)
    dirs, bounds = [], []
    for _ in range(rng.integers(1, 5)):
        c = rng.standard_normal(dim)
        s = safety.support_sum(P1, 1.0, P2, 1.0 / (1.0 - p), c)
        dirs.append(c)
        bounds.append(s * rng.uniform(1.05, 20.0))
    return rate, inv, safety.SafetySpec(tuple(dirs), tuple(bounds)), int(rng.integers(0, 150))
