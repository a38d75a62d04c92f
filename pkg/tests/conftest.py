import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, scale=1.0, cond=10.0):
    """Random SPD matrix with eigenvalues in [scale/cond, scale]."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = scale * np.exp(rng.uniform(np.log(1.0 / cond), 0.0, n))
    return (Q * w) @ Q.T


def random_psd_joint(rng, N, n, scale):
    """Block matrix (N, N, n, n) of a random PSD joint covariance."""
    F = rng.standard_normal((N * n, N * n)) * np.sqrt(scale / (N * n))
    C = F @ F.T
    return C.reshape(N, n, N, n).transpose(0, 2, 1, 3)
