import math

import numpy as np
import pytest
from conftest import jtpa_like_fit
from hypothesis import given, settings, strategies as st

from firstbest.bspline import BasisSpec
from firstbest.data import Rect, Sample, TargetDistribution, ValueWeight
from firstbest.errors import BandEmptyError, ShapeError
from firstbest.functionals import (
    DerivVector,
    band_derivative,
    bootstrap_critical_value,
    confidence_interval,
    deriv_value_band,
    deriv_welfare_sample,
    deriv_welfare_sieve,
    estimate_welfare_known_f,
    estimate_welfare_sample,
    value_known_f,
    value_sample_mean,
    var_sieve,
    var_welfare_analytic,
    welfare_known_f,
    welfare_sample_mean,
)
from firstbest.sieve import RobustCovariance, fit_propensity, fit_sieve, robust_covariance
from firstbest.dgp import make_dgp, simulate_sample
from firstbest.montecarlo import MCConfig, _spec

UNIT = Rect([0.0], [1.0])
ANNULUS_BOX = Rect.cube(-1.5, 1.5, 2)


def _step_fit(sign_right=1.0, sign_left=-1.0, noise=0.0, n=400, seed=0):
    """Two-cell indicator fit whose CATE is ``sign_left`` on [0, .5) and ``sign_right`` on [.5, 1]."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (n, 1))
    d = np.tile([0, 1], n // 2)
    h = np.where(x[:, 0] >= 0.5, sign_right, sign_left)
    y = 2.0 + d * h + noise * rng.normal(size=n)
    s = Sample(y, d, x, UNIT)
    spec = BasisSpec.build(UNIT, 0, 1)
    return fit_sieve(s, spec, spec), s


def test_welfare_and_value_on_step_cate():
    fit, s = _step_fit()
    dist = TargetDistribution.uniform(UNIT)
    assert welfare_known_f(fit, dist) == pytest.approx(0.5, abs=1e-3)
    assert value_known_f(fit, ValueWeight.constant(1.0), dist) == pytest.approx(0.5, abs=1e-3)
    assert welfare_sample_mean(fit, s) == pytest.approx(np.mean(s.x[:, 0] >= 0.5))
    assert value_sample_mean(fit, ValueWeight.constant(2.0), s) == pytest.approx(2 * np.mean(s.x[:, 0] >= 0.5))


def test_all_negative_cate_gives_zero_welfare_and_variance():
    fit, s = _step_fit(-1.0, -1.0, noise=1.0)
    dist = TargetDistribution.uniform(UNIT)
    assert welfare_known_f(fit, dist) == 0.0
    pfit = fit_propensity(s, BasisSpec.build(UNIT, 0, 0))
    assert var_welfare_analytic(fit, pfit, s, mode="sample_f") == 0.0
    assert not np.any(deriv_welfare_sieve(fit, dist).delta)


def test_zero_residuals_give_zero_analytic_variance():
    fit, s = _step_fit()
    pfit = fit_propensity(s, BasisSpec.build(UNIT, 0, 0))
    assert var_welfare_analytic(fit, pfit, s, mode="known_f") == pytest.approx(0.0, abs=1e-25)


def test_analytic_variance_by_hand():
    fit, s = _step_fit(noise=1.0, seed=3)
    pfit = fit_propensity(s, BasisSpec.build(UNIT, 0, 0))
    p = s.d.mean()
    h = fit.cate_values(s.x)
    manual = np.mean((h >= 0) * fit.residuals**2 / (p * (1 - p)))
    assert var_welfare_analytic(fit, pfit, s) == pytest.approx(manual, rel=1e-12)
    lam = lambda x: np.full(len(x), 2.0)
    assert var_welfare_analytic(fit, pfit, s, lam) == pytest.approx(4 * manual, rel=1e-12)
    extra = np.var(np.maximum(h, 0))
    assert var_welfare_analytic(fit, pfit, s, lam, "sample_f") == pytest.approx(manual + extra, rel=1e-12)


def test_welfare_derivative_cell_measure():
    fit, _ = _step_fit()
    delta = deriv_welfare_sieve(fit, TargetDistribution.uniform(UNIT), 5000)
    np.testing.assert_allclose(delta.block1, [0.0, 0.5], atol=1e-3)
    np.testing.assert_allclose(delta.block0, [0.0, -0.5], atol=1e-3)


def test_welfare_derivative_unity_when_all_treated():
    fit, s = _step_fit(1.0, 1.0)
    delta = deriv_welfare_sieve(fit, TargetDistribution.uniform(UNIT))
    assert delta.block1.sum() == pytest.approx(1.0)
    assert delta.block0.sum() == pytest.approx(-1.0)
    ds = deriv_welfare_sample(fit, s)
    assert ds.block1.sum() == pytest.approx(1.0)


def _annulus(x):
    return 1.0 - x[:, 0] ** 2 - x[:, 1] ** 2


def _one_cell():
    return BasisSpec.build(ANNULUS_BOX, 0, 0)


@pytest.mark.parametrize("eps", [0.1, 0.01, 0.005])
def test_annulus_band_identity(eps):
    spec = _one_cell()
    d = band_derivative(_annulus, spec, spec, lambda x: np.ones(len(x)), lambda x: np.full(len(x), 1 / 9),
                        ANNULUS_BOX, eps, 1_000_000)
    assert abs(d.block1[0] - math.pi / 9) < 0.01
    assert d.block0[0] == -d.block1[0]


def test_band_with_zero_weight():
    spec = _one_cell()
    d = band_derivative(_annulus, spec, spec, lambda x: np.zeros(len(x)), lambda x: np.full(len(x), 1 / 9),
                        ANNULUS_BOX, 0.1, 10_000)
    assert not np.any(d.delta)


def test_band_empty():
    fit, _ = _step_fit(1.0, 1.0)
    with pytest.raises(BandEmptyError) as exc:
        deriv_value_band(fit, ValueWeight.constant(1.0), lambda x: np.ones(len(x)), UNIT, 0.01, 1000)
    assert exc.value.hits == 0


def test_var_sieve_cases():
    d = DerivVector(np.array([1.0, -2.0, 0.5]), 2)
    assert var_sieve(d, RobustCovariance(np.eye(3))) == pytest.approx(5.25)
    assert var_sieve(DerivVector(np.zeros(3), 2), RobustCovariance(np.eye(3))) == 0.0
    with pytest.raises(ShapeError):
        var_sieve(d, RobustCovariance(np.eye(2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_var_sieve_brute_force(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=5)
    A = rng.normal(size=(5, 5))
    O = A @ A.T
    brute = sum(v[i] * O[i, j] * v[j] for i in range(5) for j in range(5))
    assert abs(var_sieve(DerivVector(v, 3), RobustCovariance(O)) - brute) <= 1e-12 * max(1.0, brute)


def test_confidence_interval():
    lo, hi = confidence_interval(0.5, 1.0, 400, 1.96)
    assert (lo, hi) == pytest.approx((0.402, 0.598))
    assert confidence_interval(0.3, 0.0, 100) == (0.3, 0.3)


def test_share_interval_is_not_truncated():
    # a share of 0.89 with interval (0.73, 1.05) implies an SE of 0.16 / 1.96
    se = 0.16 / 1.96
    lo, hi = confidence_interval(0.89, se * 10, 100, 1.96)
    assert lo == pytest.approx(0.73) and hi == pytest.approx(1.05)


def test_estimator_dispatch_errors():
    fit, s = _step_fit(noise=1.0)
    dist = TargetDistribution.uniform(UNIT)
    with pytest.raises(ValueError):
        estimate_welfare_known_f(fit, s, dist, "analytic", None)
    with pytest.raises(ValueError):
        estimate_welfare_sample(fit, s, "bogus")
    est = estimate_welfare_known_f(fit, s, dist, "sieve")
    assert est.ci_low < est.point < est.ci_high
    assert est.half_width == pytest.approx(est.ci_high - est.point)


def test_m1_analytic_standard_error_scale():
    cfg = MCConfig(models=("M1",), ns=(6000,), reps=1)
    dgp = make_dgp("M1")
    s = simulate_sample(dgp, 6000, 12345)
    t = s.d == 1
    fit = fit_sieve(s, _spec(s.domain, s.x[t], cfg), _spec(s.domain, s.x[~t], cfg))
    pfit = fit_propensity(s, _spec(s.domain, s.x, cfg))
    est = estimate_welfare_known_f(fit, s, dgp.target(), "analytic", pfit, dgp.lam)
    assert abs(est.se - 0.0237) < 0.004


@pytest.fixture(scope="module")
def jtpa_fit():
    return jtpa_like_fit()


def test_bootstrap_zero_delta(jtpa_fit):
    fit, _ = jtpa_fit
    assert bootstrap_critical_value(fit, DerivVector(np.zeros(fit.coef.size), fit.K1), 1.0, 200, 0) == 0.0


def test_bootstrap_reproducible_and_in_range(jtpa_fit):
    fit, s = jtpa_fit

    delta = deriv_welfare_sample(fit, s)
    sigma = math.sqrt(var_sieve(delta, robust_covariance(fit)))
    c1 = bootstrap_critical_value(fit, delta, sigma, 1000, 7)
    assert c1 == bootstrap_critical_value(fit, delta, sigma, 1000, 7)
    assert 1.6 <= c1 <= 2.3


def test_bootstrap_statistic_is_standardised(jtpa_fit):
    # Gaussian multipliers make Z exactly N(0, 1) given the data, so the
    # average critical value over seeds sits near the normal quantile
    fit, s = jtpa_fit
    delta = deriv_welfare_sample(fit, s)
    sigma = math.sqrt(var_sieve(delta, robust_covariance(fit)))
    vals = [bootstrap_critical_value(fit, delta, sigma, 1000, k) for k in range(10)]
    assert abs(np.mean(vals) - 1.96) < 0.06


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(0.01, 2.0))
def test_welfare_monotone_in_cate(seed, shift):
    fit, s = _step_fit(noise=1.0, seed=seed)
    # adding a positive constant to every treated outcome raises the CATE everywhere
    up = fit_sieve(Sample(s.y + shift * s.d, s.d, s.x, s.domain), fit.spec1, fit.spec0)
    dist = TargetDistribution.uniform(UNIT)
    assert welfare_known_f(up, dist) >= welfare_known_f(fit, dist)
    assert welfare_sample_mean(up, s) >= welfare_sample_mean(fit, s)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 50.0))
def test_scale_equivariance(seed, c):
    fit, s = _step_fit(0.3, -0.2, noise=1.0, seed=seed)
    scaled = fit_sieve(Sample(c * s.y, s.d, s.x, s.domain), fit.spec1, fit.spec0)
    h, hc = fit.cate_values(s.x), scaled.cate_values(s.x)
    np.testing.assert_array_equal(np.sign(hc), np.sign(h))
    assert welfare_sample_mean(scaled, s) == pytest.approx(c * welfare_sample_mean(fit, s), rel=1e-9)
    w = ValueWeight.constant(1.0)
    assert value_sample_mean(scaled, w, s) == value_sample_mean(fit, w, s)
