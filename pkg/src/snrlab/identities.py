"""Numerical verification of the small-noise information identities.

Each check smooths analytic densities over a geometric probe ladder
``{4 eps, 2 eps, eps}`` of noise variances, forms one-sided difference
quotients at zero, and removes the leading error terms by Richardson
extrapolation.  The checks return report dictionaries rather than booleans
so callers can apply their own tolerances and inspect intermediate values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .densities import (GaussianMixture, GaussianNoise, NoiseFamily,
                        QuadratureGrid, cross_entropy, entropy,
                        fisher_divergence, fisher_information, kl_divergence,
                        smoothed_density)
from .dsm import DensityScoreModel, ScoreModel, eta_nodes
from .evaluate import (BoundMode, per_point_nll_quadrature,
                       prior_cross_entropy)
from .schedules import ChannelSchedule

__all__ = [
    "NumericalInconsistencyError",
    "theorem1_check",
    "debruijn_check",
    "second_order_expansion_check",
    "thermo_decomposition_check",
    "pointwise_bound_check",
]


class NumericalInconsistencyError(RuntimeError):
    """Raised when a quantity violates an ordering it must satisfy exactly."""


def _joint_grid(p, q, n_nodes: int, extra_pad: float = 0.0) -> QuadratureGrid:
    lo_p, hi_p = p.bounding_box()
    lo_q, hi_q = q.bounding_box()
    bounds = [(min(a, b) - extra_pad, max(c, d) + extra_pad)
              for a, b, c, d in zip(lo_p, lo_q, hi_p, hi_q)]
    return QuadratureGrid.gauss_legendre(bounds, n_nodes)


def _richardson(values, probes):
    """Extrapolate one-sided slopes ``(f(s) - f(0)) / s`` to ``s -> 0``.

    ``values = [f(0), f(eps), f(2 eps), f(4 eps)]``.  Two Richardson levels
    remove the O(s) and O(s^2) error terms of the difference quotients.
    """
    f0, f1, f2, f4 = values
    e1, e2, e4 = probes
    d1 = (f1 - f0) / e1
    d2 = (f2 - f0) / e2
    d4 = (f4 - f0) / e4
    r1 = 2.0 * d1 - d2
    r2 = 2.0 * d2 - d4
    return (4.0 * r1 - r2) / 3.0, (d1, d2, d4)


def theorem1_check(p, q, noise: NoiseFamily | None = None,
                   eps: float = 1e-4, n_nodes: int = 512) -> dict:
    """Slope of ``sigma^2 -> KL(p_s || q_s)`` at zero vs ``-1/2 I(p || q)``.

    The relative Fisher information target is independent of the noise
    family; only zero mean and unit covariance enter at first order.
    """
    noise = noise or GaussianNoise()
    probes = (eps, 2.0 * eps, 4.0 * eps)
    grid = _joint_grid(p, q, n_nodes, extra_pad=1.0)
    kls = [kl_divergence(p, q, grid)]
    for s2 in probes:
        ps = smoothed_density(p, 1.0, s2, noise)
        qs = smoothed_density(q, 1.0, s2, noise)
        kls.append(kl_divergence(ps, qs, grid))
    if not all(a >= b - 1e-12 for a, b in zip(kls[:-1], kls[1:])):
        raise NumericalInconsistencyError(
            f"KL must shrink along the smoothing ladder, got {kls}")
    slope, quotients = _richardson(kls, probes)
    target = -0.5 * fisher_divergence(p, q, grid)
    return {
        "noise": noise.name,
        "kl_clean": kls[0],
        "kl_ladder": kls[1:],
        "difference_quotients": list(quotients),
        "fd_slope": slope,
        "minus_half_relative_fisher": target,
        "gap": slope - target,
    }


def debruijn_check(p, noise: NoiseFamily | None = None,
                   eps: float = 1e-4, n_nodes: int = 512) -> dict:
    """Slope of ``sigma^2 -> H(p_s)`` at zero vs ``+1/2 J(p)``."""
    noise = noise or GaussianNoise()
    probes = (eps, 2.0 * eps, 4.0 * eps)
    grid = QuadratureGrid.for_density(p, n_nodes, extra_pad=1.0)
    ents = [entropy(p, grid)]
    for s2 in probes:
        ents.append(entropy(smoothed_density(p, 1.0, s2, noise), grid))
    if not all(b >= a - 1e-12 for a, b in zip(ents[:-1], ents[1:])):
        raise NumericalInconsistencyError(
            f"entropy must grow along the smoothing ladder, got {ents}")
    slope, quotients = _richardson(ents, probes)
    target = 0.5 * fisher_information(p, grid)
    return {
        "noise": noise.name,
        "entropy_clean": ents[0],
        "entropy_ladder": ents[1:],
        "difference_quotients": list(quotients),
        "entropy_slope": slope,
        "half_fisher_information": target,
        "gap": slope - target,
    }


def second_order_expansion_check(p, q, noise: NoiseFamily | None = None,
                                 sigma2: float = 1e-2,
                                 n_nodes: int = 512) -> dict:
    """Residual of ``KL(p||q) = KL(p_s||q_s) + s/2 I(p||q) + o(s)``.

    Reports residuals on the ladder ``{s, s/2, s/4}``; asymptotically the
    ratio ``residual(s/4)/residual(s)`` must fall well below the linear
    value 1/4 for the first-order term to be exact.
    """
    noise = noise or GaussianNoise()
    grid = _joint_grid(p, q, n_nodes, extra_pad=1.0)
    kl_clean = kl_divergence(p, q, grid)
    relative_fisher = fisher_divergence(p, q, grid)
    ladder = [sigma2, 0.5 * sigma2, 0.25 * sigma2]
    residuals = []
    for s2 in ladder:
        ps = smoothed_density(p, 1.0, s2, noise)
        qs = smoothed_density(q, 1.0, s2, noise)
        resid = kl_clean - (kl_divergence(ps, qs, grid)
                            + 0.5 * s2 * relative_fisher)
        residuals.append(resid)
    denom = max(abs(residuals[0]), 1e-300)
    return {
        "noise": noise.name,
        "kl_clean": kl_clean,
        "relative_fisher": relative_fisher,
        "sigma2_ladder": ladder,
        "residuals": residuals,
        "ratio_quarter": abs(residuals[2]) / denom,
        "superlinear": abs(residuals[2]) <= 0.15 * denom + 1e-14,
    }


def thermo_decomposition_check(p: GaussianMixture, schedule: ChannelSchedule,
                               q: GaussianMixture, n_eta: int = 192,
                               n_nodes: int = 384) -> dict:
    """Cross-entropy decomposition along the channel, evaluated exactly.

    The channel ``y = alpha x + sigma n`` is scale invariant in distribution
    information, so all integrals run in the rescaled coordinate
    ``stilde = sigma^2 / alpha^2`` (the intrinsic noise variance):

        H(p, q) = prior + dsm - channel + O(stilde0),

    with ``prior = H(p(y1), N(0,I)) - D ln alpha1`` (the rescaled endpoint
    cross-entropy), ``dsm = 1/2 int [I(p_s||q_s) + D/s - J(p_s)] ds`` the
    score-matching functional, and ``channel = D/2 ln(s1/s0)`` the channel
    Fisher integral.  The score is the exact smoothed score of ``q``.
    """
    e = schedule.endpoints
    D = p.dim
    grid = _joint_grid(p, q, n_nodes, extra_pad=1.0)
    lhs = cross_entropy(p, q, grid)

    log_s0 = float(schedule.log_snr_true(e.eta0))
    log_s1 = float(schedule.log_snr_true(e.eta1))
    channel = 0.5 * D * (log_s1 - log_s0)

    nodes, wts = eta_nodes(schedule, n_eta)
    acc = 0.0
    for eta, w in zip(nodes, wts):
        s = math.exp(float(schedule.log_snr_true(eta)))
        ds_deta = s * float(schedule.dlog_snr_true_deta(eta))
        ps = p.smoothed(1.0, s)
        qs = q.smoothed(1.0, s)
        g = _joint_grid(ps, qs, n_nodes, extra_pad=1.0)
        integrand = (fisher_divergence(ps, qs, g) + D / s
                     - fisher_information(ps, g))
        acc += w * ds_deta * integrand
    dsm = 0.5 * acc

    a1, s1 = (float(v) for v in schedule.coefficients_at(e.eta1))
    p_y1 = p.smoothed(a1, s1 * s1)
    pi = GaussianMixture(np.array([1.0]), np.zeros((1, D)), np.array([1.0]))
    g1 = _joint_grid(p_y1, pi, n_nodes, extra_pad=1.0)
    prior = cross_entropy(p_y1, pi, g1) - D * math.log(a1)
    endpoint_kl = kl_divergence(p_y1, pi, g1)

    rhs = prior + dsm - channel
    s0 = math.exp(log_s0)
    return {
        "lhs_cross_entropy": lhs,
        "prior_term": prior,
        "dsm_term": dsm,
        "channel_fisher_term": channel,
        "rhs": rhs,
        "gap": lhs - rhs,
        "stilde0": s0,
        "endpoint_kl": endpoint_kl,
        "endpoint_warning": endpoint_kl > 0.01,
    }


def pointwise_bound_check(x: np.ndarray, schedule: ChannelSchedule,
                          q, model: ScoreModel | None = None,
                          n_eta: int = 192, n_herm: int = 40) -> dict:
    """Per-point upper bound ``-log q(x) <= prior + weighted DSM``.

    ``model`` defaults to the exact smoothed score of ``q``; passing a
    perturbed model can only enlarge the quadratic DSM term, so the slack
    must stay nonnegative either way.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if model is None:
        model = DensityScoreModel(q, schedule)
    bound = per_point_nll_quadrature(x, schedule, model,
                                     mode=BoundMode.UPPER,
                                     n_eta=n_eta, n_herm=n_herm)
    neg_log_q = -q.logpdf(x)
    slack = bound - neg_log_q
    return {
        "bound": bound,
        "neg_log_q": neg_log_q,
        "slack": slack,
        "min_slack": float(slack.min()),
        "prior_term": prior_cross_entropy(x, schedule),
    }
