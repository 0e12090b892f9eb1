import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "riemts", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.differing_executors],
)
settings.load_profile("riemts")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n, spread=1.0):
    a = rng.standard_normal((n, n))
    return a @ a.T + spread * np.eye(n)


def random_orthonormal(rng, n, r):
    q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return q


def state_space(rng, n_nodes=4, omega=0.37, transform=None):
    """Marginally stable (A, C) of order 3: a rotation plus a sign flip."""
    c, s = np.cos(omega), np.sin(omega)
    a = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, -1.0]])
    cmat = rng.standard_normal((n_nodes, 3))
    p = np.eye(3) if transform is None else transform
    pinv = np.linalg.inv(p)
    return p @ a @ pinv, cmat @ pinv


def simulate(a, c, x0, length):
    x = np.empty((len(a), length))
    x[:, 0] = x0
    for t in range(1, length):
        x[:, t] = a @ x[:, t - 1]
    return c @ x


def observability(a, c, m):
    return np.vstack([c @ np.linalg.matrix_power(a, k) for k in range(m)])
