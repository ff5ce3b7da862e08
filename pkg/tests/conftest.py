import numpy as np
import pytest
from hypothesis import settings

from ldgamma.measure import DiscreteMeasure
from ldgamma.metric_space import space_from_coords, space_from_matrix

settings.register_profile("ldgamma", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("ldgamma")


def random_space(rng, k, dim=2):
    """Random points in the plane (a genuine metric) with generic ids."""
    return space_from_coords(rng.uniform(0, 1, size=(k, dim)), [f"q{i}" for i in range(k)])


def random_matrix_space(rng, k):
    pts = rng.uniform(0, 1, size=(k, 3))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    return space_from_matrix(d, [f"m{i}" for i in range(k)])


def random_measure(rng, space, zeros=0.0):
    w = rng.dirichlet(np.ones(len(space)))
    if zeros:
        w[rng.uniform(size=len(space)) < zeros] = 0.0
        if w.sum() == 0:
            w[rng.integers(len(space))] = 1.0
    return DiscreteMeasure.from_weights(space, w, normalize=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
