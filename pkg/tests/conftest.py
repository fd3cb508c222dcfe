import numpy as np
import pytest

from ngd_sampling.acceptance import locate_mnist


@pytest.fixture(scope="session")
def mnist():
    paths = locate_mnist()
    if paths is None:
        pytest.skip("no MNIST IDX files (set NGD_MNIST_DIR or install mlxtend)")
    return paths


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, d, shift=1.0):
    A = rng.standard_normal((d, d))
    return A @ A.T + shift * np.eye(d)
