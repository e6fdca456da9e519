"""Closed-form toy densities, unit-variance noise families, and quadrature.

Everything here is deliberately low dimensional (D <= 2) and analytic: these
densities are the ground truth against which the information-theoretic
identities and likelihood bounds are checked, so their pdfs, scores and
smoothed counterparts must be available to near machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadratureGrid",
    "NoiseFamily",
    "GaussianNoise",
    "LaplaceNoise",
    "LogisticNoise",
    "UniformNoise",
    "NOISE_FAMILIES",
    "GaussianMixture",
    "QuantizedGrid",
    "ConvolvedDensity",
    "smoothed_density",
    "draw_samples",
    "entropy",
    "cross_entropy",
    "kl_divergence",
    "fisher_divergence",
    "fisher_information",
]

_LOG_2PI = math.log(2.0 * math.pi)
MAX_QUADRATURE_DIM = 2


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureGrid:
    """Tensorized Gauss-Legendre nodes/weights over an axis-aligned box."""

    nodes: np.ndarray    # [N, D]
    weights: np.ndarray  # [N]
    bounds: tuple        # ((lo, hi), ...) per dimension

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @staticmethod
    def gauss_legendre(bounds, n_nodes: int = 512) -> "QuadratureGrid":
        """Build a grid from per-dimension ``(lo, hi)`` bounds."""
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if len(bounds) > MAX_QUADRATURE_DIM:
            raise ValueError(
                f"quadrature supports at most {MAX_QUADRATURE_DIM} dimensions, "
                f"got {len(bounds)}")
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        axes, axis_w = [], []
        for lo, hi in bounds:
            if not hi > lo:
                raise ValueError(f"empty quadrature interval ({lo}, {hi})")
            axes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
            axis_w.append(0.5 * (hi - lo) * w)
        if len(bounds) == 1:
            nodes = axes[0][:, None]
            weights = axis_w[0]
        else:
            g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
            nodes = np.stack([g0.ravel(), g1.ravel()], axis=1)
            weights = np.outer(axis_w[0], axis_w[1]).ravel()
        return QuadratureGrid(nodes=nodes, weights=weights, bounds=bounds)

    @staticmethod
    def for_density(density, n_nodes: int = 512,
                    pad_std: float = 12.0, extra_pad: float = 0.0
                    ) -> "QuadratureGrid":
        """Bounds are mean +/- ``pad_std`` standard deviations of the widest
        component, optionally enlarged by ``extra_pad`` absolute units."""
        lo, hi = density.bounding_box(pad_std)
        bounds = [(l - extra_pad, h + extra_pad) for l, h in zip(lo, hi)]
        return QuadratureGrid.gauss_legendre(bounds, n_nodes)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def _panel_rule(panels, n_per_panel: int):
    x, w = np.polynomial.legendre.leggauss(n_per_panel)
    nodes, weights = [], []
    for lo, hi in panels:
        nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


# ---------------------------------------------------------------------------
# unit-variance noise families
# ---------------------------------------------------------------------------

class NoiseFamily:
    """A zero-mean, unit-variance, isotropic noise law (iid coordinates)."""

    name = "base"
    is_gaussian = False

    def pdf(self, z):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, shape):
        raise NotImplementedError

    # integration panels chosen so Gauss-Legendre resolves kinks/support edges
    def panels(self):
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianNoise(NoiseFamily):
    name: str = field(default="gaussian", init=False)
    is_gaussian = True

    def pdf(self, z):
        return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)

    def sample(self, rng, shape):
        # Box-Muller transform from open-interval uniforms
        n = int(np.prod(shape)) if np.prod(shape) else 0
        m = (n + 1) // 2
        u1 = rng.random(m)
        u2 = rng.random(m)
        u1 = np.clip(u1, np.finfo(float).tiny, None)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2),
                            r * np.sin(2.0 * np.pi * u2)])[:n]
        return z.reshape(shape)

    def panels(self):
        return ((-12.0, 0.0), (0.0, 12.0))


@dataclass(frozen=True)
class LaplaceNoise(NoiseFamily):
    """Laplace with scale ``1/sqrt(2)`` so that the variance is one."""

    name: str = field(default="laplace", init=False)
    _b = 1.0 / math.sqrt(2.0)

    def pdf(self, z):
        return np.exp(-np.abs(z) / self._b) / (2.0 * self._b)

    def sample(self, rng, shape):
        u = rng.random(shape) - 0.5
        return -self._b * np.sign(u) * np.log1p(-2.0 * np.abs(u))

    def panels(self):
        # split at the |z| kink
        return ((-30.0, 0.0), (0.0, 30.0))


@dataclass(frozen=True)
class LogisticNoise(NoiseFamily):
    """Logistic with scale ``sqrt(3)/pi`` so that the variance is one."""

    name: str = field(default="logistic", init=False)
    _s = math.sqrt(3.0) / math.pi

    def pdf(self, z):
        t = np.exp(-np.abs(z) / self._s)
        return t / (self._s * (1.0 + t) ** 2)

    def sample(self, rng, shape):
        u = np.clip(rng.random(shape), np.finfo(float).tiny, 1.0 - 1e-16)
        return self._s * (np.log(u) - np.log1p(-u))

    def panels(self):
        return ((-30.0, 0.0), (0.0, 30.0))


@dataclass(frozen=True)
class UniformNoise(NoiseFamily):
    """Uniform on ``[-sqrt(3), sqrt(3)]`` so that the variance is one."""

    name: str = field(default="uniform", init=False)
    _h = math.sqrt(3.0)

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(np.abs(z) <= self._h, 1.0 / (2.0 * self._h), 0.0)

    def sample(self, rng, shape):
        return (2.0 * rng.random(shape) - 1.0) * self._h

    def panels(self):
        return ((-self._h, self._h),)


NOISE_FAMILIES = {
    "gaussian": GaussianNoise(),
    "laplace": LaplaceNoise(),
    "logistic": LogisticNoise(),
    "uniform": UniformNoise(),
}


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture with per-component scalar variances.

    Parameters
    ----------
    weights : array [K], nonnegative, summing to one.
    means : array [K, D].
    variances : array [K], per-component isotropic variance.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.asarray(self.means, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be a probability vector")
        if np.any(v <= 0):
            raise ValueError("component variances must be positive")
        if not (len(w) == m.shape[0] == len(v)):
            raise ValueError("inconsistent mixture shapes")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def _log_comp(self, x):
        # [N, K] per-component log densities
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d2 = np.sum((x[:, None, :] - self.means[None, :, :]) ** 2, axis=2)
        return (-0.5 * d2 / self.variances[None, :]
                - 0.5 * self.dim * (_LOG_2PI + np.log(self.variances))[None, :])

    def logpdf(self, x):
        lc = self._log_comp(x)
        return np.logaddexp.reduce(lc + np.log(self.weights)[None, :], axis=1)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def score(self, x):
        """Gradient of the log density, shape [N, D]."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lc = self._log_comp(x) + np.log(self.weights)[None, :]
        lc -= lc.max(axis=1, keepdims=True)
        r = np.exp(lc)
        r /= r.sum(axis=1, keepdims=True)
        # per-component score: -(x - mu_k) / v_k
        comp = -(x[:, None, :] - self.means[None, :, :]) / self.variances[None, :, None]
        return np.einsum("nk,nkd->nd", r, comp)

    def sample(self, rng: np.random.Generator, n: int,
               noise: NoiseFamily | None = None):
        noise = noise or GaussianNoise()
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = noise.sample(rng, (n, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * z

    def second_moment(self) -> float:
        """``E ||x||^2``."""
        return float(np.dot(self.weights,
                            self.dim * self.variances
                            + np.sum(self.means ** 2, axis=1)))

    def bounding_box(self, pad_std: float = 12.0):
        sd = math.sqrt(float(self.variances.max()))
        lo = self.means.min(axis=0) - pad_std * sd
        hi = self.means.max(axis=0) + pad_std * sd
        return lo, hi

    def smoothed(self, alpha: float, sigma2: float,
                 noise: NoiseFamily | None = None):
        """Law of ``alpha x + sigma z`` for ``x`` from this mixture."""
        noise = noise or GaussianNoise()
        if noise.is_gaussian:
            return GaussianMixture(self.weights, alpha * self.means,
                                   alpha * alpha * self.variances + sigma2)
        if self.dim != 1:
            raise NotImplementedError(
                "non-Gaussian smoothing is implemented for 1D densities only")
        base = self if alpha == 1.0 else GaussianMixture(
            self.weights, alpha * self.means, alpha * alpha * self.variances)
        return ConvolvedDensity(base, math.sqrt(sigma2), noise)


@dataclass(frozen=True)
class ConvolvedDensity:
    """1D law of ``x + sigma z`` with non-Gaussian unit-variance ``z``.

    The pdf is evaluated as ``E_z[p(y - sigma z)]`` with panelled
    Gauss-Legendre quadrature over the standardized noise variable, which
    stays accurate down to very small ``sigma`` because the base density is
    smooth while the kernel kinks live at fixed panel boundaries.
    """

    base: GaussianMixture
    sigma: float
    noise: NoiseFamily
    n_per_panel: int = 200

    @property
    def dim(self) -> int:
        return 1

    def _rule(self):
        return _panel_rule(self.noise.panels(), self.n_per_panel)

    def pdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z, w = self._rule()
        kw = w * self.noise.pdf(z)                        # [M]
        pts = x[:, 0][:, None] - self.sigma * z[None, :]  # [N, M]
        vals = self.base.pdf(pts.reshape(-1, 1)).reshape(pts.shape)
        return vals @ kw

    def logpdf(self, x):
        return np.log(np.clip(self.pdf(x), 1e-300, None))

    def score(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z, w = self._rule()
        kw = w * self.noise.pdf(z)
        pts = (x[:, 0][:, None] - self.sigma * z[None, :]).reshape(-1, 1)
        p = self.base.pdf(pts).reshape(x.shape[0], -1)
        dp = (self.base.score(pts)[:, 0] * self.base.pdf(pts)).reshape(x.shape[0], -1)
        return ((dp @ kw) / np.clip(p @ kw, 1e-300, None))[:, None]

    def bounding_box(self, pad_std: float = 12.0):
        lo, hi = self.base.bounding_box(pad_std)
        pad = self.sigma * 12.0
        return lo - pad, hi + pad

    def smoothed(self, alpha, sigma2, noise=None):
        raise NotImplementedError("convolved densities cannot be re-smoothed")


@dataclass(frozen=True)
class QuantizedGrid:
    """Discrete source on ``levels`` points mapped affinely onto [lo, hi).

    The canonical instance is 256 evenly spaced levels on [-1, 1), the usual
    8-bit image convention.
    """

    levels: int = 256
    lo: float = -1.0
    hi: float = 1.0
    masses: np.ndarray | None = None

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least two levels")
        if self.masses is not None:
            m = np.asarray(self.masses, dtype=float)
            if len(m) != self.levels or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
                raise ValueError("masses must be a probability vector over levels")
            object.__setattr__(self, "masses", m)

    @property
    def dim(self) -> int:
        return 1

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.levels

    @property
    def positions(self) -> np.ndarray:
        """Left edge of each bin (the value a quantized sample takes)."""
        return self.lo + self.bin_width * np.arange(self.levels)

    @property
    def probability_vector(self) -> np.ndarray:
        if self.masses is None:
            return np.full(self.levels, 1.0 / self.levels)
        return self.masses

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.choice(self.levels, size=n, p=self.probability_vector)
        return self.positions[idx][:, None]

    def log_mass(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.clip(((x[:, 0] - self.lo) / self.bin_width).astype(int),
                      0, self.levels - 1)
        return np.log(self.probability_vector[idx])

    def entropy_bits(self) -> float:
        p = self.probability_vector
        p = p[p > 0]
        return float(-(p * np.log2(p)).sum())

    def dequantized_uniform(self, rng: np.random.Generator, n: int):
        """Samples ``x + u`` with ``u`` uniform over one bin."""
        return self.sample(rng, n) + self.bin_width * rng.random((n, 1))

    def smoothed(self, alpha: float, sigma2: float,
                 noise: NoiseFamily | None = None):
        """Mixture-of-kernels density of ``alpha x + sigma z``."""
        noise = noise or GaussianNoise()
        if not noise.is_gaussian:
            raise NotImplementedError(
                "quantized sources support Gaussian smoothing only")
        return GaussianMixture(self.probability_vector,
                               alpha * self.positions[:, None],
                               np.full(self.levels, sigma2))

    def bounding_box(self, pad_std: float = 12.0):
        return np.array([self.lo]), np.array([self.hi])


def smoothed_density(density, alpha: float, sigma2: float,
                     noise: NoiseFamily | None = None):
    """Law of ``alpha x + sigma z`` for ``x ~ density``, ``z ~ noise``."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    if sigma2 == 0:
        if alpha != 1.0:
            raise ValueError("zero-noise smoothing requires alpha == 1")
        return density
    return density.smoothed(alpha, sigma2, noise)


def draw_samples(density, rng: np.random.Generator, n: int,
                 noise: NoiseFamily | None = None):
    return density.sample(rng, n) if noise is None else density.sample(rng, n, noise)


# ---------------------------------------------------------------------------
# information functionals (quadrature)
# ---------------------------------------------------------------------------

def _tiny_clip(p):
    return np.clip(p, 1e-300, None)


def entropy(p, grid: QuadratureGrid) -> float:
    vals = p.pdf(grid.nodes)
    return -grid.integrate(vals * np.log(_tiny_clip(vals)))


def cross_entropy(p, q, grid: QuadratureGrid) -> float:
    return -grid.integrate(p.pdf(grid.nodes) * q.logpdf(grid.nodes))


def kl_divergence(p, q, grid: QuadratureGrid) -> float:
    pv = p.pdf(grid.nodes)
    return grid.integrate(pv * (np.log(_tiny_clip(pv)) - q.logpdf(grid.nodes)))


def fisher_divergence(p, q, grid: QuadratureGrid) -> float:
    """``int p ||grad log p - grad log q||^2`` (relative Fisher information)."""
    diff = p.score(grid.nodes) - q.score(grid.nodes)
    return grid.integrate(p.pdf(grid.nodes) * np.sum(diff * diff, axis=1))


def fisher_information(p, grid: QuadratureGrid) -> float:
    s = p.score(grid.nodes)
    return grid.integrate(p.pdf(grid.nodes) * np.sum(s * s, axis=1))
