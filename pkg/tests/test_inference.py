import numpy as np
import pytest

from core.inference import (
    OUT_OF_SCOPE,
    TheoryPoint,
    adjust_multiplicity,
    efficiency_ratio,
    family_tests,
    latent_correlations,
    se_lemma1,
    se_lemma2,
    se_lemma3,
    se_lemma4,
    solve_correlation_for_ratio,
    theory_scope,
    var_matrix_theory,
    wald_test,
)
from utils.exception_handler import InputError


def test_unadjusted_standard_error():
    assert se_lemma1(0.5, 41) == pytest.approx(0.22429, abs=1e-5)
    assert se_lemma1(0.0, 500) == pytest.approx(0.06325, abs=1e-5)
    assert se_lemma1(0.0, 2) == pytest.approx(1.0)


def test_adjusted_standard_error_examples():
    assert se_lemma4(TheoryPoint(0.5, 0.0, 0.0, 41)) == pytest.approx(0.22429, abs=1e-5)
    assert se_lemma4(TheoryPoint(0.5, 1.0, 0.0, 41)) == pytest.approx(0.16098, abs=1e-5)


def test_reduces_to_special_cases(rng):
    for tau, lam, gamma in rng.normal(scale=2.0, size=(50, 3)):
        n = int(rng.integers(1, 500))
        assert se_lemma4(TheoryPoint(tau, lam, 0.0, n)) == pytest.approx(se_lemma2(tau, lam, n), rel=1e-14)
        assert se_lemma4(TheoryPoint(tau, 0.0, gamma, n)) == pytest.approx(se_lemma3(tau, gamma, n), rel=1e-14)
        assert se_lemma4(TheoryPoint(tau, -gamma / 2, gamma, n)) == pytest.approx(se_lemma1(tau, n), rel=1e-14)


def test_adjustment_never_hurts_and_matches_matrix(rng):
    for tau, lam, gamma in rng.normal(scale=3.0, size=(1000, 3)):
        n = int(rng.integers(1, 1000))
        point = TheoryPoint(tau, lam, gamma, n)
        se = se_lemma4(point)
        assert se <= se_lemma1(tau, n) * (1 + 1e-14)
        assert np.sqrt(var_matrix_theory(point)[2, 2]) == pytest.approx(se, rel=1e-12)
        assert se_lemma4(TheoryPoint(tau, -lam, -gamma, n)) == pytest.approx(se, rel=1e-14)


def test_var_matrix_at_origin():
    matrix = var_matrix_theory(TheoryPoint(0.0, 0.0, 0.0, 1))
    assert np.allclose(np.diag(matrix), [1.0, 2.0, 2.0])
    assert matrix[0, 1] == pytest.approx(-1.0)
    assert matrix[0, 2] == 0.0 and matrix[1, 2] == 0.0
    assert np.array_equal(matrix, matrix.T)
    assert np.sqrt(var_matrix_theory(TheoryPoint(0.0, 0.0, 0.0, 500))[0, 0]) == pytest.approx(0.04472, abs=1e-5)


def test_efficiency_ratio():
    assert efficiency_ratio(0.3, 0.0, 0.0) == pytest.approx(1.0)
    assert efficiency_ratio(0.7, -0.4, 0.8) == pytest.approx(1.0)
    assert efficiency_ratio(0.5, 2.0, 0.0) < efficiency_ratio(0.5, 1.0, 0.0)


def test_solve_correlation_for_ratio():
    assert solve_correlation_for_ratio(0.75, 0.5, "prognostic") == pytest.approx(0.51, abs=0.01)
    assert solve_correlation_for_ratio(0.75, 0.5, "predictive") == pytest.approx(0.83, abs=0.01)
    assert solve_correlation_for_ratio(1.0, 0.5) == 0.0
    with pytest.raises(InputError):
        solve_correlation_for_ratio(0.1, 0.5, "predictive")


def test_wald_test():
    null = wald_test(0.0, 1.0)
    assert (null.z, null.p_raw) == (0.0, 1.0)
    assert wald_test(1.96, 1.0).p_raw == pytest.approx(0.05, abs=1e-4)
    assert wald_test(-0.30, 0.09).p_raw < 0.001
    result = wald_test(0.5, 0.1)
    assert (result.ci_lo, result.ci_hi) == pytest.approx((0.5 - 0.1959964, 0.5 + 0.1959964))
    with pytest.raises(InputError):
        wald_test(0.5, 0.0)


def test_bonferroni_and_single_test():
    z = np.full(4, 2.3263479)  # 双侧 p = 0.02
    assert np.allclose(adjust_multiplicity(z, "bonferroni"), 0.08, atol=1e-6)
    single = adjust_multiplicity([1.5], "maxt", np.eye(1))
    assert single[0] == pytest.approx(wald_test(1.5, 1.0).p_raw)


def test_maxt_between_raw_and_bonferroni():
    z = np.array([2.5, 1.0, -0.4])
    cov = np.array([[1.0, 0.6, 0.2], [0.6, 1.0, 0.3], [0.2, 0.3, 1.0]])
    maxt = adjust_multiplicity(z, "maxt", cov, seed=1)
    raw = adjust_multiplicity(z, "bonferroni") / 3
    assert np.all(maxt >= raw)
    assert np.all(maxt <= np.minimum(1.0, 3 * raw) + 0.01)
    assert np.array_equal(maxt, adjust_multiplicity(z, "maxt", cov, seed=1))


def test_maxt_perfectly_correlated_matches_raw():
    z = np.array([2.0, 2.0])
    adjusted = adjust_multiplicity(z, "maxt", np.ones((2, 2)))
    assert adjusted[0] == pytest.approx(wald_test(2.0, 1.0).p_raw, abs=0.005)


def test_multiplicity_input_checks():
    with pytest.raises(InputError):
        adjust_multiplicity([1.0, 2.0], "maxt", np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(InputError):
        adjust_multiplicity([1.0, 2.0], "holm")
    with pytest.raises(InputError):
        adjust_multiplicity([1.0, 2.0], "maxt", np.eye(2), draws=1000)


def test_family_tests_names_and_fallback():
    results = family_tests([0.3, -0.1], np.diag([0.01, 0.04]), ["a", "b"])
    assert list(results) == ["a", "b"]
    assert results["a"].p_adjusted >= results["a"].p_raw
    fallback = family_tests([0.3, -0.1], np.array([[0.01, np.nan], [np.nan, 0.04]]), ["a", "b"])
    assert fallback["a"].p_adjusted == pytest.approx(min(1.0, 2 * fallback["a"].p_raw))


def test_theory_scope():
    assert theory_scope(1, ["probit", "probit"], ["linear", "linear"]) is None
    assert theory_scope(2, ["probit"] * 3, ["linear"] * 3) == OUT_OF_SCOPE
    assert theory_scope(1, ["probit", "logit"], ["linear", "step"]) == OUT_OF_SCOPE
    assert theory_scope(1, ["probit", "probit"], ["linear", "linear"], n_arms=3) == OUT_OF_SCOPE


def test_latent_correlations():
    rho0, rho1 = latent_correlations(0.25, 0.25)
    assert rho0 == pytest.approx(-0.24254, abs=1e-5)
    assert rho1 == pytest.approx(-0.44721, abs=1e-5)
