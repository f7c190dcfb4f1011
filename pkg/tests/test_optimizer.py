import numpy as np
import pytest

from core.optimizer import (
    covariance_from_information,
    delta_method_se,
    maximize,
    numeric_gradient,
    numeric_hessian,
)
from utils.exception_handler import IdentifiabilityError


A = np.array([[2.0, 0.5], [0.5, 1.0]])
CENTER = np.array([1.0, -2.0])


def quadratic(x):
    d = x - CENTER
    return -0.5 * d @ A @ d


def test_numeric_derivatives_of_quadratic():
    x = np.array([0.3, 0.7])
    assert np.allclose(numeric_gradient(quadratic, x), -A @ (x - CENTER), atol=1e-7)
    hess = numeric_hessian(quadratic, x)
    assert np.array_equal(hess, hess.T)
    assert np.allclose(hess, -A, atol=1e-5)


def test_maximize_quadratic():
    result = maximize(quadratic, np.zeros(2), n_obs=1)
    assert result.convergence.converged
    assert np.allclose(result.x, CENTER, atol=1e-5)
    assert result.loglik == pytest.approx(0.0, abs=1e-9)


def test_maximize_survives_non_finite_region():
    def loglik(x):
        if x[0] <= 0:
            return -np.inf
        return np.log(x[0]) - x[0]

    result = maximize(loglik, np.array([3.0]), n_obs=1)
    assert result.x[0] == pytest.approx(1.0, abs=1e-4)


def test_flagged_when_iterations_exhausted():
    def rosenbrock(x):
        return -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    result = maximize(rosenbrock, np.array([-1.5, 2.0]), n_obs=1, max_iter=2, max_polish=0)
    assert result.convergence.status == "flagged"
    assert not result.convergence.converged


def test_covariance_from_information():
    cov = covariance_from_information(A)
    assert np.allclose(cov @ A, np.eye(2))
    with pytest.raises(IdentifiabilityError):
        covariance_from_information(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_delta_method_linear_function():
    cov = np.array([[0.04, 0.01], [0.01, 0.09]])
    se = delta_method_se(lambda x: np.array([x[0] + 2 * x[1]]), np.zeros(2), cov)
    assert se[0] == pytest.approx(np.sqrt(0.04 + 4 * 0.01 + 4 * 0.09))
