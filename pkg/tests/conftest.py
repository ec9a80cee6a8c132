import numpy as np
import pytest


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def near_hermitian(rng, n, nonnormal=0.1, lo=0.01, hi=10.0):
    """Hermitian positive definite matrix plus a small non-Hermitian part."""
    lam = np.sort(rng.uniform(lo, hi, n))
    Q, _ = np.linalg.qr(crandn(rng, n, n))
    return Q @ np.diag(lam) @ Q.conj().T + nonnormal * crandn(rng, n, n) / np.sqrt(n)


def shifted_nonsymmetric(rng, n, shift=None):
    """Well-conditioned nonsymmetric real matrix."""
    M = rng.standard_normal((n, n)) / np.sqrt(n)
    return M + (shift if shift is not None else 3.0) * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
