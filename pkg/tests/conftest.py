import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mkmc import KernelSet, SymmetricKernel

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_spd(rng, n, extra=5, ridge=0.0):
    """Well-conditioned SPD matrix: Wishart with more samples than dim."""
    b = rng.standard_normal((n, n + extra))
    return b @ b.T / (n + extra) + ridge * np.eye(n)


def random_mask(rng, n, frac):
    m = np.ones(n, dtype=bool)
    k = int(round(frac * n))
    if k:
        m[rng.choice(n, size=k, replace=False)] = False
    return m


def random_kernel_set(rng, K, ell, frac, lam=1e-3):
    ks = [SymmetricKernel(random_spd(rng, ell), random_mask(rng, ell, frac)) for _ in range(K)]
    return KernelSet(ks, lam=lam)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
