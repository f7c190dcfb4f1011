import numpy as np
import pytest

from core.copula import (
    CopulaParams,
    build_lambda,
    conditional_summary,
    copula_from_correlation,
    correlation,
    correlation_from_copula,
    omega_for_arm,
    rank_descending,
    standardize,
    strengths,
)
from utils.exception_handler import InputError


def test_build_lambda_two_variables():
    params = CopulaParams([0.25], [[0.25]])
    assert np.allclose(build_lambda(params, 0), [[1, 0], [0.25, 1]])
    assert np.allclose(build_lambda(params, 1), [[1, 0], [0.5, 1]])


def test_build_lambda_only_last_row_shifts():
    params = CopulaParams([0.25, 0.25, 0.25], [[0.5, 0.0]])
    treated = build_lambda(params, 1)
    assert np.allclose(treated[2, :2], [0.75, 0.25])
    assert treated[1, 0] == pytest.approx(0.25)


def test_standardize_two_variables():
    factor = standardize(build_lambda(CopulaParams([0.25], [[0.0]]), 0))
    assert np.allclose(factor.omega, [[1, 0], [0.25, np.sqrt(1.0625)]])
    sigma = correlation(factor)
    assert np.allclose(sigma, [[1, -0.2425356], [-0.2425356, 1]])


def test_identity_when_independent():
    factor = omega_for_arm(CopulaParams.independence(3), 1)
    assert np.allclose(factor.omega, np.eye(3))
    assert np.allclose(correlation(factor), np.eye(3))


def test_treated_correlation():
    sigma = correlation(omega_for_arm(CopulaParams([0.25], [[0.25]]), 1))
    assert sigma[1, 0] == pytest.approx(-0.44721, abs=1e-5)


def test_correlation_has_unit_diagonal(rng):
    for _ in range(20):
        params = CopulaParams(rng.normal(scale=2.0, size=10), rng.normal(size=(2, 4)))
        for arm in range(3):
            sigma = correlation(omega_for_arm(params, arm))
            assert np.allclose(np.diag(sigma), 1.0, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(sigma) > 0)


def test_strengths():
    none = strengths(omega_for_arm(CopulaParams([0.3, 0.1, -0.2], [[0.0, 0.0]]), 0),
                     [omega_for_arm(CopulaParams([0.3, 0.1, -0.2], [[0.0, 0.0]]), 1)])
    assert np.allclose(none.predictive, 0.0)

    params = CopulaParams([0.25], [[0.25]])
    control, treated = omega_for_arm(params, 0), omega_for_arm(params, 1)
    table = strengths(control, [treated])
    assert table.prognostic[0] == pytest.approx(0.25)
    c0, c1 = control.diag[0], treated.diag[0]
    assert table.predictive[0, 0] == pytest.approx(abs(0.5 * c1 - 0.25 * c0))


def test_rank_ties_broken_by_index():
    assert rank_descending(np.array([1.0, 2.0, 2.0, 0.0])).tolist() == [1, 2, 0, 3]


def test_conditional_summary():
    betas, sigma, r2 = conditional_summary(omega_for_arm(CopulaParams.independence(3), 0))
    assert np.allclose(betas, 0.0)
    assert (sigma, r2) == pytest.approx((1.0, 0.0))

    betas, sigma, r2 = conditional_summary(omega_for_arm(CopulaParams([0.25], [[0.5]]), 0))
    assert betas[0] == pytest.approx(-0.24254, abs=1e-5)
    assert r2 == pytest.approx(0.05882, abs=1e-5)

    _, _, r2_treated = conditional_summary(omega_for_arm(CopulaParams([0.25], [[0.5]]), 1))
    assert r2_treated == pytest.approx(0.36)


def test_correlation_round_trip():
    assert correlation_from_copula(0.25) == pytest.approx(-0.24254, abs=1e-5)
    assert correlation_from_copula(0.75) == pytest.approx(-0.6)
    assert copula_from_correlation(correlation_from_copula(-1.3)) == pytest.approx(-1.3)
    with pytest.raises(InputError):
        copula_from_correlation(1.0)


def test_invalid_parameters():
    with pytest.raises(InputError):
        CopulaParams([0.1, 0.2], [[0.0]])
    with pytest.raises(InputError):
        CopulaParams([np.nan], [[0.0]])
    with pytest.raises(InputError):
        build_lambda(CopulaParams([0.1], [[0.0]]), 2)
