import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rfnet.kernels import get_backend
from rfnet.numerics import NotPositiveDefinite

from conftest import random_spd


@pytest.fixture
def py():
    return get_backend("python")


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_backend("fortran")


@pytest.mark.parametrize("shape", [(1, 1), (7, 3), (200, 50)])
def test_rectify_normalize_agrees(backend, py, rng, shape):
    x = rng.standard_normal(shape)
    x[0] = -np.abs(x[0])
    assert_allclose(backend.rectify_normalize(x), py.rectify_normalize(x), rtol=1e-13, atol=1e-15)


def test_rectify_normalize_edges(backend):
    assert backend.rectify_normalize(np.zeros((3, 0))).shape == (3, 0)
    assert_array_equal(backend.rectify_normalize(np.zeros((2, 2))), [[1, 0], [1, 0]])
    assert_array_equal(backend.rectify_normalize(np.array([[-3.0, -1.0, -1.0]])), [[0, 1, 0]])


@pytest.mark.parametrize("shape", [(1, 1), (9, 4), (300, 40)])
def test_estep_objective_agrees(backend, py, rng, shape):
    n, l = shape
    mu, mu_p = rng.standard_normal(shape), rng.standard_normal(shape)
    A = random_spd(rng, l)
    assert backend.estep_objective(mu, mu_p, A) == pytest.approx(py.estep_objective(mu, mu_p, A), rel=1e-12)


@pytest.mark.parametrize("eps", [0.0, 0.3, 10.0])
def test_reduced_direction_agrees(backend, py, rng, eps):
    A = random_spd(rng, 5)
    mu_old = np.maximum(rng.standard_normal((40, 5)), 0.0)
    mu_p = rng.standard_normal((40, 5))
    assert_allclose(backend.reduced_direction(mu_old, mu_p, A, eps),
                    py.reduced_direction(mu_old, mu_p, A, eps), rtol=1e-10, atol=1e-12)


def test_reduced_direction_all_active_is_gradient(backend, rng):
    A = random_spd(rng, 3)
    mu_p = rng.standard_normal((4, 3))
    mu_old = np.zeros((4, 3))
    assert_allclose(backend.reduced_direction(mu_old, mu_p, A, 0.0), mu_p @ A, atol=1e-12)


def test_reduced_direction_indefinite_block(backend):
    A = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveDefinite):
        backend.reduced_direction(np.ones((1, 2)), np.zeros((1, 2)), A, 0.0)
