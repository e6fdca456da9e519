"""Gaussian noise channels parameterized by the log signal-to-noise coordinate.

Every channel is ``y = alpha(eta) * x + sigma(eta) * n`` with ``eta`` increasing
from clean data to pure noise.  A schedule is a variance family ``sigma^2(eta)``
combined with a regime that ties ``alpha`` to ``sigma``:

* variance preserving (VP): ``alpha^2 + sigma^2 = 1``
* straight path (SP):       ``alpha + sigma = 1``
* variance exploding (VE):  ``alpha = 1``

The signal-to-noise ratio ``alpha^2 / sigma^2`` is strictly decreasing in
``eta`` for every supported combination, so ``eta`` is the canonical ordering
coordinate everywhere in this package; wall-clock time only appears inside
proposal distributions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Regime",
    "VarianceFamily",
    "Sigmoid",
    "GeneralizedSigmoid",
    "TanhSquash",
    "VeExponential",
    "LogSnrEndpoints",
    "ChannelSchedule",
    "conditional_variance",
    "conditional_variance_naive",
    "forward_perturb",
]

_SQRT_EPS = math.sqrt(np.finfo(float).eps)


def _sigmoid(x):
    # numerically symmetric logistic; avoids overflow for large |x|
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


class Regime(enum.Enum):
    """How the signal coefficient is tied to the noise scale."""

    VP = "vp"
    SP = "sp"
    VE = "ve"


class VarianceFamily:
    """Base class: a monotone map ``eta -> sigma^2(eta)`` on the real line."""

    name: str = "base"

    def sigma2(self, eta):
        raise NotImplementedError

    def dsigma2_deta(self, eta):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"family": self.name}


@dataclass(frozen=True)
class Sigmoid(VarianceFamily):
    """``sigma^2 = logistic(eta)``; the workhorse family."""

    name: str = field(default="sigmoid", init=False)

    def sigma2(self, eta):
        return _sigmoid(eta)

    def dsigma2_deta(self, eta):
        s = _sigmoid(eta)
        return s * (1.0 - s)


@dataclass(frozen=True)
class GeneralizedSigmoid(VarianceFamily):
    """``sigma^2 = logistic(eta)^a`` with shape exponent ``a`` in (0, 4].

    d(sigma^2)/d(eta) = a * logistic(-eta) * sigma^2.
    """

    a: float = 1.0
    name: str = field(default="generalized_sigmoid", init=False)

    def __post_init__(self):
        if not (0.0 < self.a <= 4.0):
            raise ValueError(f"shape exponent a must lie in (0, 4], got {self.a}")

    def sigma2(self, eta):
        return _sigmoid(eta) ** self.a

    def dsigma2_deta(self, eta):
        return self.a * _sigmoid(-eta) * self.sigma2(eta)

    def describe(self) -> dict:
        return {"family": self.name, "a": self.a}


@dataclass(frozen=True)
class TanhSquash(VarianceFamily):
    """``sigma^2 = (tanh(eta) + 1) / 2``, identically ``logistic(2 eta)``."""

    name: str = field(default="tanh_squash", init=False)

    def sigma2(self, eta):
        return _sigmoid(2.0 * eta)

    def dsigma2_deta(self, eta):
        s = _sigmoid(2.0 * eta)
        return 2.0 * s * (1.0 - s)


@dataclass(frozen=True)
class VeExponential(VarianceFamily):
    """``sigma^2 = exp(eta)``; only meaningful in the VE regime."""

    name: str = field(default="ve_exponential", init=False)

    def sigma2(self, eta):
        return np.exp(eta)

    def dsigma2_deta(self, eta):
        return np.exp(eta)


@dataclass(frozen=True)
class LogSnrEndpoints:
    """Integration window ``[eta0, eta1]`` in the log-SNR coordinate."""

    eta0: float = -8.7
    eta1: float = 5.0

    def __post_init__(self):
        if not (self.eta0 < self.eta1):
            raise ValueError(f"need eta0 < eta1, got [{self.eta0}, {self.eta1}]")

    @property
    def width(self) -> float:
        return self.eta1 - self.eta0


FAMILIES = {
    "sigmoid": Sigmoid,
    "generalized_sigmoid": GeneralizedSigmoid,
    "tanh_squash": TanhSquash,
    "ve_exponential": VeExponential,
}


@dataclass(frozen=True)
class ChannelSchedule:
    """A variance family, a regime, and an endpoint window.

    All coefficient queries are elementwise over numpy arrays of ``eta``.
    """

    family: VarianceFamily = field(default_factory=Sigmoid)
    regime: Regime = Regime.VP
    endpoints: LogSnrEndpoints = field(default_factory=LogSnrEndpoints)

    def __post_init__(self):
        if self.regime is Regime.VE and not isinstance(self.family, VeExponential):
            raise ValueError("VE regime requires the ve_exponential family")
        if self.regime is not Regime.VE and isinstance(self.family, VeExponential):
            raise ValueError("ve_exponential family requires the VE regime")
        if self.regime in (Regime.VP, Regime.SP):
            # sigma^2 must stay inside (0, 1) so alpha is well defined
            for eta in (self.endpoints.eta0, self.endpoints.eta1):
                s2 = float(self.family.sigma2(eta))
                if not (0.0 < s2 < 1.0):
                    raise ValueError(
                        f"sigma^2({eta}) = {s2} outside (0,1); invalid for "
                        f"regime {self.regime.value}")

    # --- coefficient queries -------------------------------------------------

    def sigma2(self, eta):
        return self.family.sigma2(np.asarray(eta, dtype=float))

    def dsigma2_deta(self, eta):
        return self.family.dsigma2_deta(np.asarray(eta, dtype=float))

    def coefficients_at(self, eta):
        """Return ``(alpha, sigma)`` at ``eta`` (elementwise)."""
        s2 = self.sigma2(eta)
        sigma = np.sqrt(s2)
        if self.regime is Regime.VP:
            alpha = np.sqrt(1.0 - s2)
        elif self.regime is Regime.SP:
            alpha = 1.0 - sigma
        else:
            alpha = np.ones_like(sigma)
        return alpha, sigma

    def alpha2(self, eta):
        a, _ = self.coefficients_at(eta)
        return a * a

    def snr(self, eta):
        a, s = self.coefficients_at(eta)
        return (a / s) ** 2

    def log_snr_true(self, eta):
        """``log(sigma^2 / alpha^2)``: the intrinsic noise coordinate.

        Coincides with ``eta`` for VP-sigmoid and VE; for other combinations
        it is a strictly increasing reparameterization of ``eta``.
        """
        a, s = self.coefficients_at(eta)
        return 2.0 * (np.log(s) - np.log(a))

    def dlog_snr_true_deta(self, eta):
        """Derivative of :meth:`log_snr_true`; the exact-likelihood weight."""
        s2 = self.sigma2(eta)
        ds2 = self.dsigma2_deta(eta)
        if self.regime is Regime.VP:
            return ds2 / (s2 * (1.0 - s2))
        if self.regime is Regime.SP:
            # alpha = 1 - sqrt(s2); dalpha^2/deta = -ds2 * (1 - sqrt(s2)) / sqrt(s2)
            sig = np.sqrt(s2)
            return ds2 / s2 + ds2 / (sig * (1.0 - sig))
        return np.ones_like(np.asarray(eta, dtype=float))

    # --- derivative helpers for predictor conversions ------------------------

    def dsigma_deta(self, eta):
        return self.dsigma2_deta(eta) / (2.0 * np.sqrt(self.sigma2(eta)))

    def dalpha_deta(self, eta):
        ds2 = self.dsigma2_deta(eta)
        if self.regime is Regime.VP:
            alpha, _ = self.coefficients_at(eta)
            return -ds2 / (2.0 * alpha)
        if self.regime is Regime.SP:
            return -self.dsigma_deta(eta)
        return np.zeros_like(np.asarray(eta, dtype=float))

    def describe(self) -> dict:
        d = self.family.describe()
        d.update(regime=self.regime.value,
                 eta0=self.endpoints.eta0, eta1=self.endpoints.eta1)
        return d


def conditional_variance_naive(schedule: ChannelSchedule, eta_s, eta_t):
    """``sigma_{t|s}^2 = sigma_t^2 - (alpha_t/alpha_s)^2 sigma_s^2``.

    Textbook form; loses precision catastrophically when ``eta_s`` is close
    to ``eta_t``.  Kept for oracle comparisons and non-VP-sigmoid schedules.
    """
    a_s, s_s = schedule.coefficients_at(eta_s)
    a_t, s_t = schedule.coefficients_at(eta_t)
    return s_t * s_t - (a_t / a_s) ** 2 * s_s * s_s


def conditional_variance(schedule: ChannelSchedule, eta_s, eta_t):
    """Variance of the forward transition kernel from ``eta_s`` to ``eta_t``.

    For the VP-sigmoid channel this uses the cancellation-free form
    ``-expm1(softplus(eta_s) - softplus(eta_t))`` which stays accurate even
    for nearly-degenerate steps.  ``eta_t >= eta_s`` is required.
    """
    eta_s = np.asarray(eta_s, dtype=float)
    eta_t = np.asarray(eta_t, dtype=float)
    if np.any(eta_t < eta_s):
        raise ValueError("transition requires eta_t >= eta_s")
    if schedule.regime is Regime.VP and isinstance(schedule.family, Sigmoid):
        # -expm1(softplus(eta_s) - softplus(eta_t)) with the inner difference
        # evaluated as -log1p(sigmoid(eta_s) * expm1(eta_t - eta_s)), which
        # keeps full precision even for nearly-degenerate steps
        sp = -np.log1p(_sigmoid(eta_s) * np.expm1(eta_t - eta_s))
        return -np.expm1(sp)
    return conditional_variance_naive(schedule, eta_s, eta_t)


def forward_perturb(schedule: ChannelSchedule, x, eta, n):
    """Apply the channel: ``y = alpha(eta) x + sigma(eta) n`` (broadcasting)."""
    alpha, sigma = schedule.coefficients_at(eta)
    x = np.asarray(x, dtype=float)
    n = np.asarray(n, dtype=float)
    alpha = np.asarray(alpha)[..., None] if np.ndim(x) > np.ndim(alpha) else alpha
    sigma = np.asarray(sigma)[..., None] if np.ndim(x) > np.ndim(sigma) else sigma
    return alpha * x + sigma * n
