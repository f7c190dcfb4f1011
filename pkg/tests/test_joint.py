import numpy as np
import pytest
from scipy import stats

from cli.data_loader import load_analysis_data
from config.settings import AnalysisConfig, load_config
from core.basis import BasisLayout
from core.copula import CopulaParams, correlation_from_copula
from core.joint import (
    JointData,
    JointEvaluator,
    JointModel,
    JointSpec,
    ParameterLayout,
    conditional_cdf,
    fit_joint,
    joint_loglik,
    marginal_recovery_check,
    sample_joint,
)
from core.links import LinkFunction
from core.marginal import MarginalModel, MarginalSpec, ObservationSet, fit_marginal, marginal_cdf
from utils.exception_handler import InputError, UnsupportedConfigurationError
from tests.conftest import ANOREXIA_CONFIG, exact_rows, linear_model, two_variable_model, two_variable_spec


def test_independent_standard_normals():
    value = joint_loglik(two_variable_spec(), two_variable_model(), exact_rows([0.0], [0.0], [0]))
    assert value == pytest.approx(-1.83788, abs=1e-5)


def test_correlated_control_row():
    value = joint_loglik(two_variable_spec(), two_variable_model(lam=0.25), exact_rows([0.0], [0.0], [0]))
    assert value == pytest.approx(-1.80756, abs=1e-5)


def test_matches_bivariate_normal_density(rng):
    lam, gamma, tau = 0.4, -0.7, 0.3
    cov, out = (0.2, 1.3), (-0.4, 0.8)
    model = two_variable_model(lam, gamma, tau, cov=cov, out=out)
    x = rng.normal(size=50)
    y = rng.normal(size=50)
    arms = np.tile([0, 1], 25)
    evaluator_data = exact_rows(x, y, arms)
    layouts = [m.basis.layout for m in model.marginals]
    evaluator = JointEvaluator(two_variable_spec(), layouts, evaluator_data)
    per_row = evaluator.row_loglik([m.basis.coefficients for m in model.marginals], model.outcome.tau, model.copula)

    for i in range(50):
        rho = correlation_from_copula(lam + arms[i] * gamma)
        z = np.array([cov[0] + cov[1] * x[i], out[0] + out[1] * y[i] - tau * arms[i]])
        expected = stats.multivariate_normal(cov=[[1, rho], [rho, 1]]).logpdf(z) + np.log(cov[1] * out[1])
        assert per_row[i] == pytest.approx(expected, abs=1e-10)


def test_binary_outcome_under_independence():
    spec = JointSpec((MarginalSpec("X", "covariate", basis="linear"),
                      MarginalSpec("Y", "outcome", basis="step", n_levels=2, link="logit")))
    outcome = MarginalModel(BasisLayout("step", n_levels=2).build([0.0]), LinkFunction("logit"), tau=[0.0])
    model = JointModel((linear_model("X", "covariate"), outcome), CopulaParams([0.0], [[0.0]]))
    data = JointData((ObservationSet.from_exact([0.0]), ObservationSet.from_categories([2])), [0])
    assert joint_loglik(spec, model, data) == pytest.approx(stats.norm.logpdf(0.0) + np.log(0.5))


def test_missing_outcome_contributes_covariate_terms_only():
    data = JointData((ObservationSet.from_exact([0.0]), ObservationSet.from_exact([np.nan])), [1])
    value = joint_loglik(two_variable_spec(), two_variable_model(lam=0.8, gamma=0.3), data)
    assert value == pytest.approx(stats.norm.logpdf(0.0))


def test_censored_outcome_uses_conditional_probability():
    model = two_variable_model(lam=0.5)
    data = JointData((ObservationSet.from_exact([0.4]), ObservationSet.from_survival([0.2], [0])), [0])
    omega = model.omega(0).omega
    expected = stats.norm.logpdf(0.4) + stats.norm.logsf(omega[1, 0] * 0.4 + omega[1, 1] * 0.2)
    assert joint_loglik(two_variable_spec(), model, data) == pytest.approx(expected)


def test_discrete_covariate_needs_approximation():
    marginals = (MarginalSpec("S", "covariate", basis="step", n_levels=2), MarginalSpec("Y", "outcome", basis="linear"))
    covariate = MarginalModel(BasisLayout("step", n_levels=2).build([0.0]), LinkFunction("probit"), role="covariate")
    model = JointModel((covariate, linear_model()), CopulaParams([0.2], [[0.0]]))
    data = JointData((ObservationSet.from_categories([1, 2]), ObservationSet.from_exact([0.1, -0.3])), [0, 1])
    with pytest.raises(UnsupportedConfigurationError):
        joint_loglik(JointSpec(marginals), model, data)

    approx = JointSpec(marginals, discrete_approx=True, jitter_seed=3)
    first = joint_loglik(approx, model, data)
    assert np.isfinite(first)
    assert joint_loglik(approx, model, data) == first


def test_missing_covariate_is_rejected():
    data = JointData((ObservationSet.from_exact([np.nan]), ObservationSet.from_exact([0.0])), [0])
    with pytest.raises(InputError):
        joint_loglik(two_variable_spec(), two_variable_model(), data)


def test_parameter_layout_positions():
    layouts = [BasisLayout("linear"), BasisLayout("linear"), BasisLayout("linear")]
    spec = JointSpec((MarginalSpec("A", "covariate"), MarginalSpec("B", "covariate"), MarginalSpec("Y")), n_arms=3)
    layout = ParameterLayout(spec, layouts)
    assert layout.tau_indices().tolist() == [6, 7]
    assert layout.prognostic_indices().tolist() == [9, 10]
    assert layout.gamma_indices(2).tolist() == [13, 14]
    assert layout.size == 15
    labels = layout.labels()
    assert labels[6] == "tau[1]"
    assert labels[10] == "lambda[Y,B]"
    assert labels[13] == "gamma[2,A]"


def test_conditional_cdf_examples():
    model = two_variable_model(lam=0.25)
    assert conditional_cdf(model, 0.0, 0, [0.0]) == pytest.approx(0.5)
    assert conditional_cdf(model, 0.0, 0, [1.0]) == pytest.approx(0.59871, abs=1e-5)
    independent = two_variable_model(tau=0.4)
    y = np.array([-1.0, 0.2, 1.7])
    assert np.allclose(conditional_cdf(independent, y, 1, np.full((3, 1), 0.9)),
                       marginal_cdf(independent.outcome, y, 1))


def test_marginal_recovery():
    grid = np.linspace(-2, 2, 9)
    assert marginal_recovery_check(two_variable_model(tau=0.5), 1, grid) == 0.0
    assert marginal_recovery_check(two_variable_model(lam=1.0), 0, grid) <= 0.005


def test_sample_joint_independent_columns_are_standard_normal():
    data = sample_joint(two_variable_model(), 0, 10_000, seed=11)
    for column in data.columns:
        assert stats.kstest(column.lo, "norm").pvalue > 0.01


def test_sample_joint_latent_correlation():
    data = sample_joint(two_variable_model(lam=0.25, gamma=0.25), 1, 100_000, seed=5)
    rho = np.corrcoef(data.latent.T)[0, 1]
    assert rho == pytest.approx(-0.44721, abs=0.01)


def test_sample_joint_with_quantile_override():
    data = sample_joint(two_variable_model(), 0, 100_000, seed=2, covariate_quantiles={0: stats.chi2(5)})
    x = data.columns[0].lo
    assert np.mean(x) == pytest.approx(5.0, abs=0.05)
    assert np.var(x) == pytest.approx(10.0, rel=0.03)


def test_fit_joint_recovers_parameters(normal_pair_data):
    fit = fit_joint(two_variable_spec(), normal_pair_data)
    assert fit.convergence.converged
    assert fit.convergence.grad_norm <= 1e-5
    lam = fit.estimates[fit.layout.prognostic_indices()[0]]
    gamma = fit.estimates[fit.layout.gamma_indices(1)[0]]
    assert lam == pytest.approx(0.25, abs=0.2)
    assert gamma == pytest.approx(0.25, abs=0.3)
    assert fit.tau[0] == pytest.approx(0.5, abs=0.2)
    assert np.allclose(fit.covariance, fit.covariance.T, atol=1e-8)
    derived = fit.derived_quantities()
    assert set(derived) == {"prognostic_strength", "predictive_strength", "ranking", "conditional"}
    assert derived["prognostic_strength"]["X"]["se"] > 0


def test_fit_joint_without_covariates_equals_marginal_fit(normal_pair_data):
    spec = JointSpec((MarginalSpec("Y", "outcome", basis="linear"),))
    data = JointData((normal_pair_data.columns[1],), normal_pair_data.arms)
    fit = fit_joint(spec, data)
    marginal = fit_marginal(spec.outcome, data.columns[0], data.arms)
    assert fit.tau[0] == marginal.tau[0]


def test_prognostic_only_model(normal_pair_data):
    fit = fit_joint(two_variable_spec(predictive=False), normal_pair_data)
    assert fit.layout.gamma_indices(1).size == 0
    assert np.allclose(fit.model.copula.gammas, 0.0)


def test_fit_joint_warm_start_length_checked(normal_pair_data):
    with pytest.raises(InputError):
        fit_joint(two_variable_spec(), normal_pair_data, init=np.zeros(3))


def test_fit_joint_row_permutation_invariant():
    config = load_config(ANOREXIA_CONFIG, AnalysisConfig)
    loaded = load_analysis_data(config, config_path=ANOREXIA_CONFIG)
    order = np.random.default_rng(1).permutation(loaded.data.n_rows)
    fit = fit_joint(loaded.spec, loaded.data)
    shuffled = fit_joint(loaded.spec, loaded.data.subset(order))
    assert np.allclose(shuffled.estimates, fit.estimates, rtol=0, atol=1e-8)
