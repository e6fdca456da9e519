"""Proposal distributions over the log-SNR coordinate for loss estimation.

Three families:

* ``UniformT``: the canonical time map is linear, ``eta(t) = eta0 + t * W``,
  so drawing t uniformly gives a flat density ``1/W`` over the window.
* ``DesignedEta``: density proportional to ``alpha(eta)^2``, which makes the
  effective per-sample weight of the likelihood-weighted loss constant.  The
  normalizer and inverse CDF are closed form for the VP sigmoid and
  tanh-squash channels and numeric otherwise.
* ``LearnedMonotone``: a tiny monotone network ``t -> eta(t)`` trained to
  minimize the variance surrogate ``E[(eta'(t) L)^2]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dsm import Weighting, loss_weight, dsm_integrand, _leggauss
from .schedules import ChannelSchedule, Regime, Sigmoid, TanhSquash

__all__ = [
    "Proposal",
    "UniformT",
    "DesignedEta",
    "MonotoneNet",
    "LearnedMonotone",
    "designed_normalizer",
    "learned_variance_objective",
    "train_learned_proposal",
    "estimator_variance_report",
]


class Proposal:
    """A density over [eta0, eta1] with inverse-CDF sampling."""

    name = "base"

    def sample_eta(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def density(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cdf(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class UniformT(Proposal):
    schedule: ChannelSchedule
    name: str = field(default="uniform_t", init=False)

    def sample_eta(self, u):
        e = self.schedule.endpoints
        return e.eta0 + e.width * np.asarray(u, dtype=float)

    def density(self, eta):
        e = self.schedule.endpoints
        return np.full_like(np.asarray(eta, dtype=float), 1.0 / e.width)

    def cdf(self, eta):
        e = self.schedule.endpoints
        return np.clip((np.asarray(eta, dtype=float) - e.eta0) / e.width, 0.0, 1.0)


def _softplus(x):
    return np.logaddexp(0.0, x)


def designed_normalizer(schedule: ChannelSchedule, n_eta: int = 1024):
    """``Z = int alpha^2(eta) deta`` over the window, with a method tag.

    Closed forms: VP sigmoid gives ``log((1+e^-eta0)/(1+e^-eta1))``; VP
    tanh-squash gives half that expression at doubled arguments; VE gives the
    window width.  Everything else falls back to Gauss-Legendre quadrature.
    """
    e = schedule.endpoints
    if schedule.regime is Regime.VP and isinstance(schedule.family, Sigmoid):
        return _softplus(-e.eta0) - _softplus(-e.eta1), "closed_form"
    if schedule.regime is Regime.VP and isinstance(schedule.family, TanhSquash):
        return 0.5 * (_softplus(-2.0 * e.eta0) - _softplus(-2.0 * e.eta1)), "closed_form"
    if schedule.regime is Regime.VE:
        return e.width, "closed_form"
    x, w = _leggauss(n_eta)
    nodes = 0.5 * e.width * x + 0.5 * (e.eta0 + e.eta1)
    return float(np.dot(0.5 * e.width * w, schedule.alpha2(nodes))), "quadrature"


class DesignedEta(Proposal):
    """Density proportional to ``alpha^2`` over the window."""

    name = "designed_eta"

    def __init__(self, schedule: ChannelSchedule, n_eta: int = 2048):
        self.schedule = schedule
        self.normalizer, self.method = designed_normalizer(schedule, n_eta)
        e = schedule.endpoints
        self._closed = (schedule.regime is Regime.VP
                        and isinstance(schedule.family, (Sigmoid, TanhSquash)))
        self._k = 2.0 if isinstance(schedule.family, TanhSquash) else 1.0
        if not self._closed:
            # tabulated CDF on a dense grid for bisection-free inversion
            grid = np.linspace(e.eta0, e.eta1, n_eta + 1)
            dens = schedule.alpha2(grid) / self.normalizer
            cum = np.concatenate([[0.0], np.cumsum(
                0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
            cum /= cum[-1]
            self._grid, self._cum = grid, cum

    # g(eta) = softplus(-k eta) / k is a decreasing antiderivative of -alpha^2
    def _g(self, eta):
        return _softplus(-self._k * np.asarray(eta, dtype=float)) / self._k

    def density(self, eta):
        return self.schedule.alpha2(eta) / self.normalizer

    def cdf(self, eta):
        e = self.schedule.endpoints
        if self._closed:
            return (self._g(e.eta0) - self._g(eta)) / self.normalizer
        if self.schedule.regime is Regime.VE:
            return (np.asarray(eta, dtype=float) - e.eta0) / e.width
        return np.interp(eta, self._grid, self._cum)

    def sample_eta(self, u):
        u = np.asarray(u, dtype=float)
        e = self.schedule.endpoints
        if self._closed:
            g = self._g(e.eta0) - u * self.normalizer
            # invert softplus(-k eta)/k = g  =>  eta = -log(expm1(k g)) / k
            return -np.log(np.expm1(self._k * g)) / self._k
        if self.schedule.regime is Regime.VE:
            return e.eta0 + e.width * u
        # monotone interpolation seed, polished by Newton steps on the CDF
        eta = np.interp(u, self._cum, self._grid)
        for _ in range(4):
            f = np.interp(eta, self._grid, self._cum) - u
            eta = np.clip(eta - f / np.clip(self.density(eta), 1e-12, None),
                          e.eta0, e.eta1)
        return eta


# ---------------------------------------------------------------------------
# learned monotone proposal
# ---------------------------------------------------------------------------

@dataclass
class MonotoneNet:
    """``etatilde(t) = l1(t) + w3 . sigmoid(w2 * l1(t) + b2)``.

    Nonnegative weights are enforced by squaring the raw parameters, so the
    map is monotone nondecreasing by construction.  The network is pinned to
    the endpoint window afterwards, which also makes the additive biases of
    the outer layers irrelevant.
    """

    a1: float
    b1: float
    a2: np.ndarray
    b2: np.ndarray
    a3: np.ndarray

    @staticmethod
    def initialize(hidden: int = 256, seed: int = 0) -> "MonotoneNet":
        rng = np.random.default_rng(seed)
        return MonotoneNet(
            a1=1.0, b1=0.0,
            a2=0.5 * np.abs(rng.standard_normal(hidden)) + 0.1,
            b2=rng.uniform(-2.0, 2.0, hidden),
            a3=0.1 * np.abs(rng.standard_normal(hidden)) + 0.01,
        )

    @property
    def hidden(self) -> int:
        return len(self.a2)

    def _parts(self, t):
        t = np.asarray(t, dtype=float)
        w1, w2, w3 = self.a1 ** 2, self.a2 ** 2, self.a3 ** 2
        l1 = w1 * t + self.b1                                  # [N]
        z = l1[..., None] * w2[None, :] + self.b2[None, :]     # [N, H]
        h = 1.0 / (1.0 + np.exp(-z))
        g = h * (1.0 - h)
        raw = l1 + h @ w3
        draw = w1 * (1.0 + g @ (w3 * w2))
        return w1, w2, w3, l1, h, g, raw, draw

    def raw_value_and_rate(self, t):
        """``(etatilde(t), detatilde/dt)`` before endpoint pinning."""
        *_, raw, draw = self._parts(t)
        return raw, draw

    def flat(self) -> np.ndarray:
        return np.concatenate([[self.a1, self.b1], self.a2, self.b2, self.a3])

    @staticmethod
    def from_flat(v: np.ndarray, hidden: int) -> "MonotoneNet":
        v = np.asarray(v, dtype=float)
        return MonotoneNet(a1=float(v[0]), b1=float(v[1]),
                           a2=v[2:2 + hidden].copy(),
                           b2=v[2 + hidden:2 + 2 * hidden].copy(),
                           a3=v[2 + 2 * hidden:2 + 3 * hidden].copy())

    # gradients of raw value / raw rate with respect to flat parameters ------

    def _grads(self, t):
        """Per-sample jacobians d(raw)/dpsi [N,P] and d(draw)/dpsi [N,P]."""
        w1, w2, w3, l1, h, g, raw, draw = self._parts(t)
        t = np.asarray(t, dtype=float)
        N, H = h.shape
        S = 1.0 + g @ (w3 * w2)                       # detatilde/dl1
        gp = g * (1.0 - 2.0 * h)                      # dg/dz
        d_raw = np.empty((N, 2 + 3 * H))
        d_rate = np.empty((N, 2 + 3 * H))
        # a1: dl1/da1 = 2 a1 t ; dw1/da1 = 2 a1
        d_raw[:, 0] = S * 2.0 * self.a1 * t
        d_rate[:, 0] = 2.0 * self.a1 * (1.0 + g @ (w3 * w2)) \
            + w1 * (gp @ (w3 * w2 * w2)) * 2.0 * self.a1 * t
        # b1: dl1/db1 = 1
        d_raw[:, 1] = S
        d_rate[:, 1] = w1 * (gp @ (w3 * w2 * w2))
        # a2_j: dz_j = 2 a2_j l1 ; dw2_j = 2 a2_j
        dz_a2 = 2.0 * self.a2[None, :] * l1[:, None]
        d_raw[:, 2:2 + H] = w3[None, :] * g * dz_a2
        d_rate[:, 2:2 + H] = w1 * w3[None, :] * (
            2.0 * self.a2[None, :] * g + w2[None, :] * gp * dz_a2)
        # b2_j
        d_raw[:, 2 + H:2 + 2 * H] = w3[None, :] * g
        d_rate[:, 2 + H:2 + 2 * H] = w1 * w3[None, :] * w2[None, :] * gp
        # a3_j: dw3_j = 2 a3_j
        d_raw[:, 2 + 2 * H:] = 2.0 * self.a3[None, :] * h
        d_rate[:, 2 + 2 * H:] = w1 * 2.0 * self.a3[None, :] * w2[None, :] * g
        return raw, draw, d_raw, d_rate


class LearnedMonotone(Proposal):
    """Proposal induced by a monotone time-to-eta map pinned to the window."""

    name = "learned_monotone"

    def __init__(self, schedule: ChannelSchedule, net: MonotoneNet | None = None,
                 hidden: int = 256, seed: int = 0):
        self.schedule = schedule
        self.net = net if net is not None else MonotoneNet.initialize(hidden, seed)

    def eta_and_rate(self, t):
        """Pinned ``eta(t)`` and ``deta/dt`` for ``t`` in [0, 1]."""
        e = self.schedule.endpoints
        raw, draw = self.net.raw_value_and_rate(np.asarray(t, dtype=float))
        r0, _ = self.net.raw_value_and_rate(np.zeros(1))
        r1, _ = self.net.raw_value_and_rate(np.ones(1))
        span = float(r1[0] - r0[0])
        eta = e.eta0 + e.width * (raw - float(r0[0])) / span
        rate = e.width * draw / span
        return eta, rate

    def sample_eta(self, u):
        eta, _ = self.eta_and_rate(u)
        return eta

    def t_of_eta(self, eta):
        """Invert the monotone map by bisection."""
        eta = np.asarray(eta, dtype=float)
        lo = np.zeros_like(eta)
        hi = np.ones_like(eta)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            val, _ = self.eta_and_rate(mid)
            below = val < eta
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def density(self, eta):
        t = self.t_of_eta(eta)
        _, rate = self.eta_and_rate(t)
        return 1.0 / rate

    def cdf(self, eta):
        return self.t_of_eta(eta)


def learned_variance_objective(proposal: LearnedMonotone, t: np.ndarray,
                               losses: np.ndarray) -> float:
    """Variance surrogate ``E[(eta'(t) L)^2]`` on a batch.

    ``losses`` are per-sample unweighted loss values at ``eta(t)`` (the
    integrand times the loss weight), treated as constants with respect to
    the proposal parameters.
    """
    _, rate = proposal.eta_and_rate(t)
    return float(np.mean((rate * losses) ** 2))


def _objective_and_grad(net: MonotoneNet, schedule: ChannelSchedule,
                        t: np.ndarray, losses: np.ndarray):
    e = schedule.endpoints
    raw, draw, d_raw, d_rate = net._grads(t)
    raw0, _, d_raw0, _ = net._grads(np.zeros(1))
    raw1, _, d_raw1, _ = net._grads(np.ones(1))
    span = float(raw1[0] - raw0[0])
    d_span = d_raw1[0] - d_raw0[0]
    rate = e.width * draw / span
    val = np.mean((rate * losses) ** 2)
    # d rate/dpsi = W ( d_rate / span - draw d_span / span^2 )
    d_rate_psi = e.width * (d_rate / span
                            - draw[:, None] * d_span[None, :] / span ** 2)
    grad = np.mean(2.0 * (rate * losses ** 2)[:, None] * d_rate_psi, axis=0)
    return float(val), grad


def train_learned_proposal(schedule: ChannelSchedule, x_samples: np.ndarray,
                           model, rng: np.random.Generator,
                           steps: int = 500, batch: int = 256,
                           lr: float = 1e-2, hidden: int = 256,
                           weighting: Weighting = Weighting.LIKELIHOOD,
                           loss_fn=None, seed: int = 0):
    """Adam on the variance surrogate; returns the proposal and a trace.

    ``loss_fn(eta, rng) -> per-sample L`` defaults to the likelihood-weighted
    DSM integrand on random data rows with fresh Gaussian noise.
    """
    from .densities import GaussianNoise
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    prop = LearnedMonotone(schedule, hidden=hidden, seed=seed)
    psi = prop.net.flat()
    m = np.zeros_like(psi)
    v = np.zeros_like(psi)
    b1, b2, eps = 0.9, 0.99, 1e-8
    trace = []
    for step in range(1, steps + 1):
        t = rng.random(batch)
        net = MonotoneNet.from_flat(psi, hidden)
        prop.net = net
        eta, _ = prop.eta_and_rate(t)
        if loss_fn is None:
            idx = rng.integers(0, x_samples.shape[0], size=batch)
            n = GaussianNoise().sample(rng, (batch, x_samples.shape[1]))
            L = loss_weight(schedule, eta, weighting) * dsm_integrand(
                schedule, eta, x_samples[idx], n, model)
        else:
            L = loss_fn(eta, rng)
        val, grad = _objective_and_grad(net, schedule, t, L)
        if not np.isfinite(val):
            raise FloatingPointError(f"proposal training diverged at step {step}")
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mhat = m / (1 - b1 ** step)
        vhat = v / (1 - b2 ** step)
        psi = psi - lr * mhat / (np.sqrt(vhat) + eps)
        trace.append(val)
    prop.net = MonotoneNet.from_flat(psi, hidden)
    return prop, np.array(trace)


# ---------------------------------------------------------------------------
# variance reporting
# ---------------------------------------------------------------------------

def estimator_variance_report(schedule: ChannelSchedule, x_samples: np.ndarray,
                              model, proposals: dict, seed: int,
                              n_samples: int = 2000, n_repeats: int = 20,
                              weighting: Weighting = Weighting.LIKELIHOOD) -> dict:
    """Paired comparison of loss estimators across proposals.

    Within each repeat the data rows, uniform variates, and Gaussian noise
    are drawn once and shared by every proposal (common random numbers), so
    the comparison is paired sample by sample.  Reports per-proposal means,
    the variance of the repeat means, per-sample variances, and pairwise
    statistics against the first proposal (the baseline): the mean log
    variance ratio with a 95% one-sided upper bound, and the z-score for
    agreement of means.
    """
    from .densities import GaussianNoise
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    names = list(proposals)
    means = {k: [] for k in names}
    per_sample_var = {k: [] for k in names}
    root = np.random.SeedSequence(seed)
    for rep_seq in root.spawn(n_repeats):
        rng = np.random.default_rng(rep_seq)
        idx = rng.integers(0, x_samples.shape[0], size=n_samples)
        u = rng.random(n_samples)
        n = GaussianNoise().sample(rng, (n_samples, x_samples.shape[1]))
        for name in names:
            prop = proposals[name]
            eta = prop.sample_eta(u)
            ratio = loss_weight(schedule, eta, weighting) / prop.density(eta)
            vals = ratio * dsm_integrand(schedule, eta, x_samples[idx], n, model)
            means[name].append(float(vals.mean()))
            per_sample_var[name].append(float(vals.var(ddof=1)))
    report = {"n_samples": n_samples, "n_repeats": n_repeats, "proposals": {}}
    for name in names:
        mm = np.array(means[name])
        report["proposals"][name] = {
            "mean": float(mm.mean()),
            "std_error": float(mm.std(ddof=1) / math.sqrt(n_repeats)),
            "repeat_mean_variance": float(mm.var(ddof=1)),
            "per_sample_variance": float(np.mean(per_sample_var[name])),
        }
    base = names[0]
    report["baseline"] = base
    report["comparisons"] = {}
    t95 = 1.729  # one-sided t quantile, 19 dof
    for name in names[1:]:
        logr = np.log(np.array(per_sample_var[name])
                      / np.array(per_sample_var[base]))
        mean_lr = float(logr.mean())
        ub = mean_lr + t95 * float(logr.std(ddof=1)) / math.sqrt(n_repeats)
        ma = report["proposals"][name]
        mb = report["proposals"][base]
        z = abs(ma["mean"] - mb["mean"]) / math.sqrt(
            ma["std_error"] ** 2 + mb["std_error"] ** 2)
        report["comparisons"][name] = {
            "variance_ratio": math.exp(mean_lr),
            "log_variance_ratio_upper95": ub,
            "mean_agreement_z": float(z),
        }
    return report
