import numpy as np
import pytest

from crsn.sysmodel import LtiSystem


@pytest.fixture
def scalar_sys():
    return LtiSystem([[0.8]], [[1.0]], [[1.0]], [[1.0]])


@pytest.fixture
def bounds_sys():
    return LtiSystem([[0.8, 1.0], [0.0, 0.95]], [[1.0, 1.0]], np.eye(2), [[1.0]])


@pytest.fixture
def design_sys():
    return LtiSystem([[0.8, 1.0], [0.0, 0.95]], [[0.5, 0.3], [0.0, 1.4]],
                     np.eye(2), np.eye(2))


def random_psd(rng, n, scale=1.0, ridge=0.0):
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T) / n + ridge * np.eye(n)


def random_stable_system(rng, n=2, m=2, rho_max=0.9):
    a = rng.normal(size=(n, n))
    rho = max(abs(np.linalg.eigvals(a)))
    a *= rng.uniform(0.3, rho_max) / rho
    c = rng.normal(size=(m, n))
    q = random_psd(rng, n, ridge=0.05)
    r = random_psd(rng, m, ridge=0.2)
    return LtiSystem(a, c, q, r)
