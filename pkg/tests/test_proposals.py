import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snrlab.densities import GaussianMixture
from snrlab.dsm import DensityScoreModel
from snrlab.proposals import (DesignedEta, LearnedMonotone, MonotoneNet,
                              UniformT, designed_normalizer,
                              estimator_variance_report,
                              learned_variance_objective)
from snrlab.schedules import (ChannelSchedule, LogSnrEndpoints, Regime,
                              Sigmoid, TanhSquash, VeExponential)

STD_NORMAL = GaussianMixture([1.0], [[0.0]], [1.0])
ENDPOINTS = LogSnrEndpoints(-8.7, 5.0)


def _softplus(x):
    return np.logaddexp(0.0, x)


def test_designed_normalizer_closed_forms():
    vp = ChannelSchedule(Sigmoid(), Regime.VP, ENDPOINTS)
    Z, method = designed_normalizer(vp)
    assert method == "closed_form"
    assert Z == pytest.approx(_softplus(8.7) - _softplus(-5.0), rel=1e-14)
    assert Z == pytest.approx(8.693451223447994, rel=1e-14)

    tanh = ChannelSchedule(TanhSquash(), Regime.VP, ENDPOINTS)
    Zt, method = designed_normalizer(tanh)
    assert method == "closed_form"
    assert Zt == pytest.approx(0.5 * (_softplus(17.4) - _softplus(-10.0)),
                               rel=1e-12)

    ve = ChannelSchedule(VeExponential(), Regime.VE, ENDPOINTS)
    Zv, method = designed_normalizer(ve)
    assert method == "closed_form"
    assert Zv == pytest.approx(ENDPOINTS.width, rel=1e-14)


def test_closed_form_matches_quadrature(vp_sigmoid):
    from snrlab.densities import QuadratureGrid
    grid = QuadratureGrid.gauss_legendre([(-8.7, 5.0)], 512)
    a2 = vp_sigmoid.alpha2(grid.nodes[:, 0])
    Z, _ = designed_normalizer(vp_sigmoid)
    assert Z == pytest.approx(float(grid.weights @ a2), rel=1e-12)


def test_uniform_t_is_flat(vp_sigmoid, rng):
    prop = UniformT(vp_sigmoid)
    etas = np.linspace(-8.6, 4.9, 11)
    np.testing.assert_allclose(prop.density(etas), 1.0 / ENDPOINTS.width,
                               rtol=1e-12)
    np.testing.assert_allclose(prop.cdf(np.array([-8.7, 5.0])), [0.0, 1.0],
                               atol=1e-12)
    draws = prop.sample_eta(rng.random(20000))
    assert draws.min() >= -8.7 and draws.max() <= 5.0
    assert abs(draws.mean() - (-8.7 + 5.0) / 2) < 0.05


def test_designed_eta_density_normalized(vp_sigmoid):
    from snrlab.densities import QuadratureGrid
    prop = DesignedEta(vp_sigmoid)
    grid = QuadratureGrid.gauss_legendre([(-8.7, 5.0)], 512)
    assert float(grid.weights @ prop.density(grid.nodes[:, 0])) == \
        pytest.approx(1.0, abs=1e-12)
    assert prop.cdf(np.array([-8.7]))[0] == pytest.approx(0.0, abs=1e-12)
    assert prop.cdf(np.array([5.0]))[0] == pytest.approx(1.0, abs=1e-12)


def test_designed_eta_inverse_cdf_round_trip(vp_sigmoid):
    prop = DesignedEta(vp_sigmoid)
    u = np.linspace(1e-6, 1 - 1e-6, 101)
    eta = prop.sample_eta(u)
    np.testing.assert_allclose(prop.cdf(eta), u, atol=1e-9)


def test_designed_eta_numeric_fallback_consistent():
    # SP regime has no closed form; the tabulated CDF must still invert
    sch = ChannelSchedule(Sigmoid(), Regime.SP, ENDPOINTS)
    prop = DesignedEta(sch)
    u = np.linspace(0.01, 0.99, 25)
    eta = prop.sample_eta(u)
    np.testing.assert_allclose(prop.cdf(eta), u, atol=1e-7)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_monotone_net_rate_positive(seed):
    net = MonotoneNet.initialize(hidden=32, seed=seed)
    t = np.linspace(0, 1, 64)
    _, rate = net.raw_value_and_rate(t)
    assert np.all(rate > 0)


def test_monotone_net_rate_matches_finite_difference():
    net = MonotoneNet.initialize(hidden=16, seed=4)
    t = np.linspace(0.05, 0.95, 21)
    h = 1e-6
    vp, _ = net.raw_value_and_rate(t + h)
    vm, _ = net.raw_value_and_rate(t - h)
    _, rate = net.raw_value_and_rate(t)
    np.testing.assert_allclose(rate, (vp - vm) / (2 * h), rtol=1e-6)


def test_monotone_net_param_grads_match_finite_difference():
    net = MonotoneNet.initialize(hidden=8, seed=7)
    t = np.array([0.2, 0.6, 0.9])
    _, _, d_raw, d_rate = net._grads(t)
    psi = net.flat()
    h = 1e-6
    for k in range(psi.size):
        e = np.zeros_like(psi)
        e[k] = h
        np_ = MonotoneNet.from_flat(psi + e, 8)
        nm = MonotoneNet.from_flat(psi - e, 8)
        vp_, rp = np_.raw_value_and_rate(t)
        vm_, rm = nm.raw_value_and_rate(t)
        np.testing.assert_allclose(d_raw[:, k], (vp_ - vm_) / (2 * h),
                                   rtol=2e-4, atol=1e-7)
        np.testing.assert_allclose(d_rate[:, k], (rp - rm) / (2 * h),
                                   rtol=2e-4, atol=1e-6)


def test_learned_monotone_endpoints_pinned(vp_sigmoid):
    prop = LearnedMonotone(vp_sigmoid, hidden=32, seed=1)
    eta, rate = prop.eta_and_rate(np.array([0.0, 1.0]))
    np.testing.assert_allclose(eta, [-8.7, 5.0], atol=1e-9)
    assert np.all(rate > 0)


def test_learned_monotone_density_normalized(vp_sigmoid):
    from snrlab.densities import QuadratureGrid
    prop = LearnedMonotone(vp_sigmoid, hidden=32, seed=2)
    grid = QuadratureGrid.gauss_legendre([(-8.7 + 1e-9, 5.0 - 1e-9)], 512)
    total = float(grid.weights @ prop.density(grid.nodes[:, 0]))
    assert total == pytest.approx(1.0, abs=1e-4)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 5000), level=st.floats(0.5, 3.0))
def test_constant_loss_objective_lower_bound(seed, level):
    # with a flat loss profile, Jensen gives E[(rate L)^2] >= (E[rate] L)^2
    # on any batch, with equality only for the constant-rate (linear) map
    sch = ChannelSchedule(Sigmoid(), Regime.VP, ENDPOINTS)
    prop = LearnedMonotone(sch, hidden=16, seed=seed)
    t = np.linspace(1e-3, 1 - 1e-3, 256)
    losses = np.full(t.shape, level)
    obj = learned_variance_objective(prop, t, losses)
    _, rate = prop.eta_and_rate(t)
    assert obj >= (rate.mean() * level) ** 2 * (1 - 1e-12)


def test_variance_report_structure_and_determinism(vp_sigmoid, rng):
    model = DensityScoreModel(STD_NORMAL, vp_sigmoid)
    x = rng.standard_normal((512, 1))
    props = {"uniform_t": UniformT(vp_sigmoid),
             "designed_eta": DesignedEta(vp_sigmoid)}
    rep1 = estimator_variance_report(vp_sigmoid, x, model, props, seed=5,
                                     n_samples=400, n_repeats=5)
    rep2 = estimator_variance_report(vp_sigmoid, x, model, props, seed=5,
                                     n_samples=400, n_repeats=5)
    assert rep1 == rep2
    assert rep1["baseline"] == "uniform_t"
    cmp_ = rep1["comparisons"]["designed_eta"]
    assert set(cmp_) == {"variance_ratio", "log_variance_ratio_upper95",
                         "mean_agreement_z"}
    assert rep1["proposals"]["designed_eta"]["std_error"] > 0
