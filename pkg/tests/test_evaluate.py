import math

import numpy as np
import pytest
from scipy import stats

from snrlab.densities import GaussianMixture, QuantizedGrid
from snrlab.dsm import DensityScoreModel
from snrlab.evaluate import (BoundMode, DequantMode, ancestral_sample,
                             eta_for_noise_ratio, nll_bound,
                             per_point_nll_quadrature, prior_cross_entropy,
                             tn_gap, tn_sample,
                             truncated_normal_dequant_offset,
                             uniform_dequant_offset)
from snrlab.proposals import DesignedEta
from snrlab.schedules import (ChannelSchedule, LogSnrEndpoints, Regime,
                              Sigmoid)

STD_NORMAL = GaussianMixture([1.0], [[0.0]], [1.0])


def test_prior_cross_entropy_closed_form(vp_sigmoid):
    x = np.array([[0.0], [1.0], [-2.0]])
    a1, s1 = (float(v) for v in
              vp_sigmoid.coefficients_at(vp_sigmoid.endpoints.eta1))
    want = 0.5 * (math.log(2 * math.pi) + s1 ** 2
                  + (a1 * x[:, 0]) ** 2)
    np.testing.assert_allclose(prior_cross_entropy(x, vp_sigmoid), want,
                               atol=1e-12)


def test_tn_gap_against_scipy_entropy():
    # independent oracle: 0.5 ln(2 pi e) - differential entropy of TN
    want = 0.5 * math.log(2 * math.pi * math.e) \
        - stats.truncnorm.entropy(-3.0, 3.0)
    assert tn_gap(3.0) == pytest.approx(want, abs=1e-12)
    assert tn_gap(3.0) == pytest.approx(0.016034984754205246, abs=1e-15)


def test_tn_sample_support_and_variance(rng):
    z = tn_sample(rng, (200000, 1))
    assert np.all(np.abs(z) <= 3.0)
    assert z.var() == pytest.approx(stats.truncnorm.var(-3.0, 3.0), abs=1e-2)


def test_truncated_normal_offset_frozen(vp_sigmoid):
    off, eta_eps = truncated_normal_dequant_offset(vp_sigmoid, 1, 256)
    assert off == pytest.approx(-5.240886184697206, rel=1e-12)
    assert eta_eps == pytest.approx(-13.287579466295345, rel=1e-12)
    # the noise-to-signal ratio at eta_eps matches half a bin over tau
    a, s = (float(v) for v in vp_sigmoid.coefficients_at(eta_eps))
    assert s / a == pytest.approx(1.0 / 768.0, rel=1e-9)


def test_uniform_offset_frozen():
    assert uniform_dequant_offset(QuantizedGrid(256), 1) == \
        pytest.approx(math.log(2.0 / 256), rel=1e-14)


def test_eta_for_noise_ratio_round_trip(vp_sigmoid):
    eta = eta_for_noise_ratio(vp_sigmoid, 0.01)
    a, s = (float(v) for v in vp_sigmoid.coefficients_at(eta))
    assert s / a == pytest.approx(0.01, rel=1e-9)


def test_calibrated_quadrature_recovers_log_density():
    # with an exact score and vanishing start noise, the calibrated
    # per-point value converges to -log q(x)
    sch = ChannelSchedule(Sigmoid(), Regime.VP, LogSnrEndpoints(-18.0, 5.0))
    model = DensityScoreModel(STD_NORMAL, sch)
    x = np.array([[0.0], [0.5], [-1.5], [2.5]])
    got = per_point_nll_quadrature(x, sch, model, BoundMode.CALIBRATED,
                                   n_eta=256, n_herm=40)
    want = -STD_NORMAL.logpdf(x)
    np.testing.assert_allclose(got, want, atol=5e-6)


def test_upper_mode_dominates_log_density(vp_sigmoid):
    model = DensityScoreModel(STD_NORMAL, vp_sigmoid)
    x = np.linspace(-2.5, 2.5, 9)[:, None]
    got = per_point_nll_quadrature(x, vp_sigmoid, model, BoundMode.UPPER,
                                   n_eta=128, n_herm=32)
    assert np.all(got + STD_NORMAL.logpdf(x) >= -1e-6)


def test_nll_bound_report_fields(vp_sigmoid, rng):
    model = DensityScoreModel(STD_NORMAL, vp_sigmoid)
    x = rng.standard_normal((16, 1))
    rep = nll_bound(x, vp_sigmoid, model, DesignedEta(vp_sigmoid),
                    rng, n_samples=200)
    assert rep.per_point_nats.shape == (16,)
    assert rep.std_error > 0
    assert rep.bits_per_dim == pytest.approx(rep.mean_nats / math.log(2))
    assert rep.dequant == DequantMode.NONE.value
    assert isinstance(rep.summary(), dict)


def test_nll_bound_deterministic(vp_sigmoid):
    model = DensityScoreModel(STD_NORMAL, vp_sigmoid)
    x = np.random.default_rng(1).standard_normal((8, 1))
    r1 = nll_bound(x, vp_sigmoid, model, DesignedEta(vp_sigmoid),
                   np.random.default_rng(2), n_samples=100)
    r2 = nll_bound(x, vp_sigmoid, model, DesignedEta(vp_sigmoid),
                   np.random.default_rng(2), n_samples=100)
    np.testing.assert_array_equal(r1.per_point_nats, r2.per_point_nats)


def test_ancestral_sampler_recovers_moments(vp_sigmoid, rng):
    model = DensityScoreModel(STD_NORMAL, vp_sigmoid)
    xs = ancestral_sample(vp_sigmoid, model, rng, 4000, 1, n_steps=128)
    assert xs.shape == (4000, 1)
    assert abs(xs.mean()) < 0.06
    assert abs(xs.var() - 1.0) < 0.08
