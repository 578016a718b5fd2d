import numpy as np
import pytest

from steinpcg import SampleSet, distinct_prefix, generate_logistic_data, rwmh_sample


def logistic_nodes(N, seed=0, d=4, step=0.1):
    """First N distinct RWMH states on a fresh logistic test bed."""
    target = generate_logistic_data(d, 1000, seed)
    chain = rwmh_sample(target, step, max(10 * N, 1000), seed=seed + 1000)
    return distinct_prefix(chain, N, target)


def random_nodes(N, d, seed=0, scale=1.0):
    """iid Gaussian nodes with arbitrary (not score-consistent) gradients."""
    rng = np.random.default_rng(seed)
    return SampleSet(scale * rng.standard_normal((N, d)), rng.standard_normal((N, d)))


@pytest.fixture(scope="session")
def nodes100():
    return logistic_nodes(100, seed=3)


@pytest.fixture(scope="session")
def nodes200():
    return logistic_nodes(200, seed=4)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
