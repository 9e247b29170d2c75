import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvlevy import WholeSpace
from mvlevy.analysis import (BihariSpec, TailEstimationError, bihari_bound, bihari_result,
                             convergence_study, estimate_tail, gaussian_tail, wasserstein2)
from mvlevy.coefficients import (ConstantDiffusion, EmpiricalMeasure, KernelCoefficients,
                                 LinearModulus, LogCapModulus, MeanFieldOU, PowerModulus, ZeroDrift)
from mvlevy.dynamics import ModerateScale, Problem
from mvlevy.rate import Halfspace, SupNorm
from mvlevy.skeleton import Control


def brownian():
    return Problem(WholeSpace(1), KernelCoefficients(1, ZeroDrift(1), ConstantDiffusion(1.0, 1)))


def test_w2_one_dimensional_shift():
    x = np.array([[0.0], [1.0], [5.0]])
    assert wasserstein2(EmpiricalMeasure(x), EmpiricalMeasure(x + 2.0)).value == pytest.approx(2.0)


def test_w2_sorting_coupling():
    mu = EmpiricalMeasure(np.array([[0.0], [1.0]]))
    nu = EmpiricalMeasure(np.array([[1.0], [0.0]]))
    r = wasserstein2(mu, nu)
    assert r.value == 0.0 and not r.bound_only
    assert wasserstein2(mu, nu, paired=True).value == 1.0


def test_w2_unequal_sizes():
    mu = EmpiricalMeasure(np.array([[0.0], [2.0]]))
    nu = EmpiricalMeasure(np.array([[0.0], [0.0], [2.0], [2.0]]))
    assert wasserstein2(mu, nu).value == pytest.approx(0.0, abs=1e-15)
    nu2 = EmpiricalMeasure(np.array([[1.0]]))
    assert wasserstein2(mu, nu2).value == pytest.approx(1.0)


def test_w2_multidimensional_is_bound():
    gen = np.random.default_rng(0)
    x, y = gen.normal(size=(2, 5, 2))
    r = wasserstein2(EmpiricalMeasure(x), EmpiricalMeasure(y))
    assert r.bound_only
    with pytest.raises(ValueError):
        wasserstein2(EmpiricalMeasure(x), EmpiricalMeasure(y[:3]))


def test_bihari_linear_is_gronwall():
    t = np.linspace(0, 1, 1001)
    b = bihari_bound(BihariSpec(2.0, 1.5, LinearModulus(1.0), t))
    assert np.max(np.abs(b - 2.0 * np.exp(1.5 * t))) <= 1e-9 * 2.0 * np.exp(1.5)


def test_bihari_sqrt_closed_form():
    # f(r) = 2 (sqrt r - 1), so the bound is (sqrt C + t / 2)^2 for q = 1
    t = np.linspace(0, 2, 201)
    b = bihari_bound(BihariSpec(0.5, 1.0, PowerModulus(0.5), t))
    assert np.allclose(b, (np.sqrt(0.5) + 0.5 * t) ** 2, rtol=1e-8, atol=0)


def test_bihari_blows_up_for_superlinear_modulus():
    # rho(s) = s^2: f(r) = 1 - 1/r, bound C / (1 - C t), infinite from t = 1/C
    t = np.linspace(0, 1, 101)
    res = bihari_result(BihariSpec(2.0, 1.0, PowerModulus(2.0), t))
    finite = t < 0.5 - 1e-9
    assert np.allclose(res.bound[finite], 2.0 / (1 - 2.0 * t[finite]), rtol=1e-8)
    assert np.all(np.isinf(res.bound[t >= 0.5]))
    assert np.isfinite(res.f_sup)


def test_bihari_logcap_between_identity_and_gronwall():
    t = np.linspace(0, 1, 51)
    b = bihari_bound(BihariSpec(0.1, 1.0, LogCapModulus(0.25), t))
    assert np.all(np.diff(b) > 0)
    assert b[0] == pytest.approx(0.1)


def test_bihari_validation():
    with pytest.raises(ValueError):
        BihariSpec(0.0, 1.0, LinearModulus(1.0), [0.0, 1.0])
    with pytest.raises(ValueError):
        BihariSpec(1.0, -1.0, LinearModulus(1.0), [0.0, 1.0])


def test_gaussian_tail_value():
    assert gaussian_tail(0.0, 0.3) == 0.5
    assert gaussian_tail(1.0, 1.0) == pytest.approx(0.15865525393145707)


def test_estimate_tail_matches_exact_probability():
    ev = Halfspace([1.0], 1.0)
    est = estimate_tail(brownian(), ev, [0.5, 0.25], 40000, 1.0, 0.25, 1, min_hits=5)
    for e, p in zip(est.epsilon, est.p_hat):
        exact = gaussian_tail(1.0, e)
        assert abs(p - exact) <= 4 * np.sqrt(exact * (1 - exact) / 40000)
    assert est.header[0] == "epsilon"
    assert len(list(est.rows())) == 2


def test_estimate_tail_drops_rare_levels():
    ev = Halfspace([1.0], 1.0)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        est = estimate_tail(brownian(), ev, [0.5, 0.02], 2000, 1.0, 0.5, 2, min_hits=10)
    assert est.used.tolist() == [True, False]
    assert any("dropped" in str(x.message) for x in w)


def test_estimate_tail_all_dropped():
    with pytest.raises(TailEstimationError):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            estimate_tail(brownian(), Halfspace([1.0], 3.0), [0.05, 0.02], 500, 1.0, 0.5, 0)


def test_estimate_tail_input_checks():
    ou = Problem(WholeSpace(1), KernelCoefficients(1, MeanFieldOU(1.0, 0.5, 1), ConstantDiffusion(1.0, 1)))
    with pytest.raises(ValueError):
        estimate_tail(ou, Halfspace([1.0], 1.0), [0.5, 0.25], 10, 1.0, 0.5, 0)
    with pytest.raises(ValueError):
        estimate_tail(brownian(), Halfspace([1.0], 1.0), [0.25, 0.5], 10, 1.0, 0.5, 0)


def test_estimate_tail_moderate_scaling():
    scale = ModerateScale(0.25)
    est = estimate_tail(brownian(), Halfspace([1.0], 0.5), [0.2, 0.1], 20000, 1.0, 0.5, 3, scale=scale)
    assert est.regime == "mdp"
    assert np.allclose(est.speed, np.sqrt([0.2, 0.1]))
    # rescaled terminal value is N(0, sqrt(eps)) in law
    for e, p in zip(est.epsilon, est.p_hat):
        exact = gaussian_tail(0.5, np.sqrt(e))
        assert abs(p - exact) <= 4 * np.sqrt(exact * (1 - exact) / 20000)


def test_estimate_tail_supnorm_event():
    est = estimate_tail(brownian(), SupNorm(1.0), [0.5, 0.3], 5000, 1.0, 0.05, 0)
    # the running maximum exceeds the terminal value: at least P(|X_T| >= 1)
    for e, p in zip(est.epsilon, est.p_hat):
        assert p >= 2 * gaussian_tail(1.0, e) - 0.02


def test_convergence_limit_mode_linear_in_epsilon():
    rep = convergence_study(brownian(), [0.2, 0.1, 0.05], 400, "limit", 0, 1.0, 0.05)
    assert rep.slope == pytest.approx(1.0, abs=1e-9)  # Brownian paths scale exactly with sqrt(eps)
    assert rep.strictly_decreasing
    assert rep.header == ("epsilon", "mean_sup_sq", "std_err", "bound_scale", "ratio")


def test_convergence_controlled_mode():
    rep = convergence_study(brownian(), [0.2, 0.1, 0.05], 200, "controlled", 1, 1.0, 0.05,
                            phi=Control.constant(1.0, 1.0))
    assert rep.strictly_decreasing


def test_convergence_mode_checked():
    with pytest.raises(ValueError):
        convergence_study(brownian(), [0.2, 0.1], 10, "other", 0, 1.0, 0.1)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.0, 3.0))
def test_property_bihari_linear_gronwall(C, q):
    t = np.linspace(0, 1, 11)
    b = bihari_bound(BihariSpec(C, q, LinearModulus(1.0), t))
    assert np.allclose(b, C * np.exp(q * t), rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
def test_property_w2_symmetric_and_zero_on_diagonal(xs):
    x = np.array(xs)[:, None]
    y = x[::-1] * 0.5 + 1.0
    mu, nu = EmpiricalMeasure(x), EmpiricalMeasure(y)
    assert wasserstein2(mu, mu).value == 0.0
    assert wasserstein2(mu, nu).value == pytest.approx(wasserstein2(nu, mu).value)
    assert wasserstein2(mu, nu).value <= wasserstein2(mu, nu, paired=True).value + 1e-12
