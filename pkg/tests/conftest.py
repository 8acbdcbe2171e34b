import numpy as np
import pytest

from missmix import MixtureParams, univariate_mixture


@pytest.fixture
def canonical_pair():
    """g=2, p=1, means -1/+1, shared unit variance, equal priors."""
    return univariate_mixture([0.5, 0.5], [-1.0, 1.0], 1.0)


def random_params(rng, g=None, p=None, homoscedastic=None, scale=2.0):
    """A valid random parameter set for fuzz tests."""
    g = g or int(rng.integers(2, 4))
    p = p or int(rng.integers(1, 3))
    if homoscedastic is None:
        homoscedastic = bool(rng.random() < 0.5)
    w = rng.dirichlet(np.ones(g) * 5.0)
    means = rng.normal(scale=scale, size=(g, p))
    covs = np.empty((g, p, p))
    if homoscedastic:
        A = rng.normal(size=(p, p))
        covs[:] = A @ A.T + 0.5 * np.eye(p)
    else:
        for i in range(g):
            A = rng.normal(size=(p, p))
            covs[i] = A @ A.T + 0.5 * np.eye(p)
    return MixtureParams(g=g, weights=w, means=means, covariances=covs,
                         homoscedastic=homoscedastic)
