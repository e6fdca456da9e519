"""Denoising score-matching loss: integrand, estimators, predictor algebra.

The population loss is an integral over the log-SNR coordinate,

    L = 1/2 * int_{eta0}^{eta1} w(eta) * E_{x,n} ||n - nhat(y, eta)||^2 deta,

with ``y = alpha(eta) x + sigma(eta) n``.  The canonical weight
``w(eta) = dsigma^2/deta / sigma^2`` turns the integral into the
sigma^2-parameterized score-matching objective; the ``alpha^2`` weight is the
variance-reduction-friendly alternative.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .densities import GaussianMixture, GaussianNoise
from .schedules import ChannelSchedule

__all__ = [
    "PredictorKind",
    "convert_predictor",
    "Weighting",
    "loss_weight",
    "LossEstimate",
    "DensityScoreModel",
    "PerturbedScoreModel",
    "ZeroScoreModel",
    "dsm_integrand",
    "loss_mc",
    "loss_quadrature",
    "zero_predictor_loss",
    "standard_normal_floor",
]


# ---------------------------------------------------------------------------
# predictor algebra
# ---------------------------------------------------------------------------

class PredictorKind(enum.Enum):
    """Equivalent output heads of a denoising model.

    ``VELOCITY`` is the static combination ``alpha n - sigma x``;
    ``FLOW`` is the instantaneous velocity
    ``(dalpha/alpha) y + (dsigma - dalpha sigma / alpha) nhat`` and needs the
    schedule rates ``(dalpha, dsigma)``.
    """

    SCORE = "score"
    NOISE = "noise"
    DATA = "data"
    VELOCITY = "velocity"
    FLOW = "flow"


def _to_noise(kind: PredictorKind, value, y, alpha, sigma, rates):
    if kind is PredictorKind.NOISE:
        return value
    if kind is PredictorKind.SCORE:
        return -sigma * value
    if kind is PredictorKind.DATA:
        return (y - alpha * value) / sigma
    if kind is PredictorKind.VELOCITY:
        return (alpha * value + sigma * y) / (alpha * alpha + sigma * sigma)
    if kind is PredictorKind.FLOW:
        da, ds = _unpack_rates(rates)
        coef = ds - da * sigma / alpha
        return (value - (da / alpha) * y) / coef
    raise ValueError(f"unknown predictor kind {kind}")


def _from_noise(kind: PredictorKind, n, y, alpha, sigma, rates):
    if kind is PredictorKind.NOISE:
        return n
    if kind is PredictorKind.SCORE:
        return -n / sigma
    if kind is PredictorKind.DATA:
        return (y - sigma * n) / alpha
    if kind is PredictorKind.VELOCITY:
        return ((alpha * alpha + sigma * sigma) * n - sigma * y) / alpha
    if kind is PredictorKind.FLOW:
        da, ds = _unpack_rates(rates)
        return (da / alpha) * y + (ds - da * sigma / alpha) * n
    raise ValueError(f"unknown predictor kind {kind}")


def _unpack_rates(rates):
    if rates is None:
        raise ValueError("FLOW predictor conversions need rates=(dalpha, dsigma)")
    da, ds = rates
    return da, ds


def convert_predictor(kind_from: PredictorKind, kind_to: PredictorKind,
                      value, y, alpha, sigma, rates=None):
    """Convert between predictor heads at a single channel state.

    All arguments broadcast elementwise.  ``rates = (dalpha/deta,
    dsigma/deta)`` is only needed when converting to or from ``FLOW``.
    """
    value = np.asarray(value, dtype=float)
    y = np.asarray(y, dtype=float)
    n = _to_noise(kind_from, value, y, alpha, sigma, rates)
    return _from_noise(kind_to, n, y, alpha, sigma, rates)


# ---------------------------------------------------------------------------
# loss weights
# ---------------------------------------------------------------------------

class Weighting(enum.Enum):
    LIKELIHOOD = "likelihood"     # dsigma^2/deta / sigma^2
    ALPHA_SQUARED = "alpha_squared"


def loss_weight(schedule: ChannelSchedule, eta,
                weighting: Weighting = Weighting.LIKELIHOOD):
    eta = np.asarray(eta, dtype=float)
    if weighting is Weighting.LIKELIHOOD:
        return schedule.dsigma2_deta(eta) / schedule.sigma2(eta)
    if weighting is Weighting.ALPHA_SQUARED:
        return schedule.alpha2(eta)
    raise ValueError(f"unknown weighting {weighting}")


# ---------------------------------------------------------------------------
# score models
# ---------------------------------------------------------------------------

class ScoreModel:
    """Interface: vectorized noise prediction ``nhat(y, eta)``.

    ``y`` has shape [N, D]; ``eta`` is a scalar or an [N] array.
    """

    def predict_noise(self, y: np.ndarray, eta) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class DensityScoreModel(ScoreModel):
    """Exact noise prediction derived from a Gaussian-mixture model density.

    The smoothed model law at ``eta`` is the mixture with components
    ``N(alpha mu_k, alpha^2 v_k + sigma^2)``, whose score is closed form, so
    ``nhat = -sigma * score`` is exact for any per-sample ``eta``.
    """

    density: GaussianMixture
    schedule: ChannelSchedule

    def smoothed_score(self, y: np.ndarray, eta) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        eta = np.broadcast_to(np.asarray(eta, dtype=float), (y.shape[0],))
        alpha, sigma = self.schedule.coefficients_at(eta)
        q = self.density
        var = (alpha * alpha)[:, None] * q.variances[None, :] \
            + (sigma * sigma)[:, None]                       # [N, K]
        diff = y[:, None, :] - alpha[:, None, None] * q.means[None, :, :]
        d2 = np.sum(diff * diff, axis=2)
        loglik = -0.5 * d2 / var - 0.5 * q.dim * (math.log(2 * math.pi) + np.log(var))
        logr = loglik + np.log(q.weights)[None, :]
        logr -= logr.max(axis=1, keepdims=True)
        r = np.exp(logr)
        r /= r.sum(axis=1, keepdims=True)
        return np.einsum("nk,nkd->nd", r, -diff / var[:, :, None])

    def predict_noise(self, y, eta):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        eta = np.broadcast_to(np.asarray(eta, dtype=float), (y.shape[0],))
        _, sigma = self.schedule.coefficients_at(eta)
        return -sigma[:, None] * self.smoothed_score(y, eta)


@dataclass(frozen=True)
class PerturbedScoreModel(ScoreModel):
    """Base prediction plus a deterministic bounded perturbation.

    Used to probe that bounds only loosen under model error.
    """

    base: ScoreModel
    delta: float = 0.1

    def predict_noise(self, y, eta):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return self.base.predict_noise(y, eta) + self.delta * np.sin(3.0 * y)


class ZeroScoreModel(ScoreModel):
    """Predicts zero noise everywhere; the no-information baseline."""

    def predict_noise(self, y, eta):
        return np.zeros_like(np.atleast_2d(np.asarray(y, dtype=float)))


# ---------------------------------------------------------------------------
# loss estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossEstimate:
    value: float
    std_error: float = 0.0
    n_samples: int = 0
    method: str = "quadrature"
    details: dict = field(default_factory=dict)


def dsm_integrand(schedule: ChannelSchedule, eta, x, n, model: ScoreModel):
    """Per-sample ``1/2 ||n - nhat(alpha x + sigma n, eta)||^2``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = np.atleast_2d(np.asarray(n, dtype=float))
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (x.shape[0],))
    alpha, sigma = schedule.coefficients_at(eta)
    y = alpha[:, None] * x + sigma[:, None] * n
    nhat = model.predict_noise(y, eta)
    return 0.5 * np.sum((n - nhat) ** 2, axis=1)


def loss_mc(schedule: ChannelSchedule, x_samples: np.ndarray, model: ScoreModel,
            proposal, rng: np.random.Generator, n_samples: int,
            weighting: Weighting = Weighting.LIKELIHOOD) -> LossEstimate:
    """Importance-sampled Monte Carlo estimate of the population loss.

    ``x_samples`` [M, D] are data draws; each MC sample pairs a uniformly
    chosen data row with ``eta ~ proposal`` and fresh Gaussian noise.  The
    per-sample value is ``w(eta)/rho(eta) * 1/2 ||n - nhat||^2``.
    """
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    idx = rng.integers(0, x_samples.shape[0], size=n_samples)
    x = x_samples[idx]
    u = rng.random(n_samples)
    eta = proposal.sample_eta(u)
    n = GaussianNoise().sample(rng, x.shape)
    ratio = loss_weight(schedule, eta, weighting) / proposal.density(eta)
    values = ratio * dsm_integrand(schedule, eta, x, n, model)
    mean = float(values.mean())
    var = float(values.var(ddof=1)) if n_samples > 1 else 0.0
    return LossEstimate(value=mean, std_error=math.sqrt(var / n_samples),
                        n_samples=n_samples, method="mc",
                        details={"per_sample_variance": var,
                                 "proposal": proposal.name,
                                 "weighting": weighting.value})


@lru_cache(maxsize=32)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def eta_nodes(schedule: ChannelSchedule, n_eta: int = 256):
    x, w = _leggauss(n_eta)
    e = schedule.endpoints
    return (0.5 * e.width * x + 0.5 * (e.eta0 + e.eta1), 0.5 * e.width * w)


def _conditional_second_moment(schedule, density: GaussianMixture,
                               model: ScoreModel, eta: float, n_inner: int):
    """``E_{x,n} ||n - nhat||^2`` at one ``eta`` by marginal quadrature.

    Uses ``E||n - nhat||^2 = D - sigma^2 J(p_eta) + E_y||nstar - nhat||^2``
    with ``nstar = -sigma * score(p_eta)`` the conditional mean of the noise.
    """
    from .densities import QuadratureGrid
    alpha, sigma = (float(v) for v in schedule.coefficients_at(eta))
    p_eta = density.smoothed(alpha, sigma * sigma)
    grid = QuadratureGrid.for_density(p_eta, n_inner)
    pv = p_eta.pdf(grid.nodes)
    s = p_eta.score(grid.nodes)
    nstar = -sigma * s
    nhat = model.predict_noise(grid.nodes, eta)
    fisher = grid.integrate(pv * np.sum(s * s, axis=1))
    mismatch = grid.integrate(pv * np.sum((nstar - nhat) ** 2, axis=1))
    return density.dim - sigma * sigma * fisher + mismatch


def loss_quadrature(schedule: ChannelSchedule, density: GaussianMixture,
                    model: ScoreModel,
                    weighting: Weighting = Weighting.LIKELIHOOD,
                    n_eta: int = 256, n_inner: int = 256) -> LossEstimate:
    """Deterministic evaluation of the population loss by nested quadrature."""
    nodes, wts = eta_nodes(schedule, n_eta)
    inner = np.array([_conditional_second_moment(schedule, density, model,
                                                 float(e), n_inner)
                      for e in nodes])
    w = loss_weight(schedule, nodes, weighting)
    value = 0.5 * float(np.dot(wts, w * inner))
    return LossEstimate(value=value, method="quadrature",
                        details={"n_eta": n_eta, "n_inner": n_inner,
                                 "weighting": weighting.value})


def zero_predictor_loss(schedule: ChannelSchedule, dim: int,
                        n_eta: int = 512) -> float:
    """Loss of the zero predictor: ``D/2 * int w(eta) deta``.

    With the likelihood weighting this is ``D/2 * ln(sigma1^2 / sigma0^2)``.
    """
    nodes, wts = eta_nodes(schedule, n_eta)
    return 0.5 * dim * float(np.dot(wts, loss_weight(schedule, nodes)))


def standard_normal_floor(schedule: ChannelSchedule, dim: int = 1,
                          n_eta: int = 512,
                          weighting: Weighting = Weighting.LIKELIHOOD) -> float:
    """Optimal-predictor loss for standard normal data.

    The optimal noise head is ``sigma y / (alpha^2 + sigma^2)`` and
    ``E||n - nhat*||^2 = D alpha^2 / (alpha^2 + sigma^2)``.
    """
    nodes, wts = eta_nodes(schedule, n_eta)
    alpha, sigma = schedule.coefficients_at(nodes)
    frac = alpha ** 2 / (alpha ** 2 + sigma ** 2)
    w = loss_weight(schedule, nodes, weighting)
    return 0.5 * dim * float(np.dot(wts, w * frac))
