import numpy as np
import pytest

from core.basis import BasisLayout, softplus, softplus_inverse
from utils.exception_handler import (
    BasisDomainError,
    BasisRangeError,
    InputError,
    UnsupportedOperationError,
)


def bernstein_012():
    return BasisLayout("bernstein", order=2, support=(0.0, 1.0)).build([0.0, 1.0, 2.0])


def test_linear_eval_is_identity():
    basis = BasisLayout("linear").build([0.0, 1.0])
    assert basis.eval(1.3) == pytest.approx(1.3)


def test_step_eval_returns_upper_cutpoint():
    basis = BasisLayout("step", n_levels=4).build([-0.5, 0.2, 1.1])
    assert basis.eval(2) == pytest.approx(0.2)
    assert basis.eval(4) == np.inf


def test_bernstein_eval_deriv_and_invert():
    basis = bernstein_012()
    assert basis.eval(0.5) == pytest.approx(1.0)
    assert basis.eval_deriv(0.5) == pytest.approx(2.0)
    assert basis.invert(1.0) == pytest.approx(0.5, abs=1e-10)


def test_bernstein_flat_coefficients_have_zero_derivative():
    basis = BasisLayout("bernstein", order=3, support=(0.0, 1.0)).build([0.7] * 4)
    assert np.allclose(basis.eval_deriv(np.linspace(0, 1, 5)), 0.0)


def test_linear_derivative_is_slope():
    basis = BasisLayout("linear").build([3.0, 2.0])
    assert basis.eval_deriv(-4.2) == pytest.approx(2.0)


def test_log_linear_eval_and_derivative():
    basis = BasisLayout("log_linear").build([0.5, 2.0])
    assert basis.eval(np.e) == pytest.approx(2.5)
    assert basis.eval_deriv(4.0) == pytest.approx(0.5)
    assert basis.invert(2.5) == pytest.approx(np.e)
    with pytest.raises(BasisDomainError):
        basis.eval(0.0)


def test_invert_linear_and_step():
    assert BasisLayout("linear").build([1.0, 2.0]).invert(5.0) == pytest.approx(2.0)
    step = BasisLayout("step", n_levels=3).build([-0.5, 0.2])
    assert step.invert(0.0) == 2
    assert step.invert(5.0) == 3


def test_bernstein_out_of_support_raises_unless_clamped():
    basis = bernstein_012()
    with pytest.raises(BasisDomainError):
        basis.eval(1.5)
    assert basis.eval(1.5, clamp=True) == pytest.approx(2.0)


def test_bernstein_invert_out_of_range_raises():
    with pytest.raises(BasisRangeError):
        bernstein_012().invert(2.5)


def test_non_finite_input_raises():
    with pytest.raises(BasisDomainError):
        BasisLayout("linear").build([0.0, 1.0]).eval(np.nan)


def test_step_derivative_is_unsupported():
    step = BasisLayout("step", n_levels=3).build([-0.5, 0.2])
    with pytest.raises(UnsupportedOperationError):
        step.eval_deriv(1)


def test_constrain_examples():
    assert np.allclose(BasisLayout("linear").constrain([0.0, 0.0], "exp"), [0.0, 1.0])
    step = BasisLayout("step", n_levels=4)
    assert np.allclose(step.constrain([-1.0, 0.0, 0.0], "exp"), [-1.0, 0.0, 1.0])


@pytest.mark.parametrize("positivity", ["softplus", "exp"])
def test_constrain_is_monotone_and_invertible(positivity, rng):
    layout = BasisLayout("bernstein", order=6, support=(-2.0, 3.0))
    raw = rng.normal(size=layout.n_params)
    coef = layout.constrain(raw, positivity)
    assert np.all(np.diff(coef) > 0)
    assert np.allclose(layout.unconstrain(coef, positivity), raw)


def test_softplus_inverse():
    v = np.array([1e-6, 0.3, 2.0, 40.0])
    assert np.allclose(softplus(softplus_inverse(v)), v)


def test_from_values_expands_support_by_five_percent():
    layout = BasisLayout.from_values("bernstein", np.array([0.0, 10.0, 4.0]))
    assert layout.support == pytest.approx((-0.5, 10.5))


def test_invalid_layouts():
    with pytest.raises(InputError):
        BasisLayout("spline")
    with pytest.raises(InputError):
        BasisLayout("step", n_levels=1)
    with pytest.raises(InputError):
        BasisLayout("linear").build([0.0, -1.0])
    with pytest.raises(InputError):
        BasisLayout("step", n_levels=3).build([0.2, 0.2])
