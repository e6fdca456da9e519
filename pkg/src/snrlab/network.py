"""A small noise-prediction MLP with hand-written reverse-mode gradients.

The architecture is fixed: ``[y, embed(eta)] -> 128 -> 128 -> D`` with tanh
hidden activations and a linear head.  Gradients are derived by hand for this
family (no tensor framework), which keeps training fully deterministic under
a seeded numpy generator and lets checkpoints round-trip bit-exactly.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .densities import GaussianNoise
from .dsm import ScoreModel, Weighting, loss_weight
from .schedules import ChannelSchedule

__all__ = [
    "NetworkConfig",
    "TrainingConfig",
    "TrainState",
    "WarmStartDataset",
    "warm_start",
    "eta_features",
    "init_params",
    "forward",
    "loss_and_grad",
    "NetworkScoreModel",
    "train",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
]


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkConfig:
    dim: int = 1
    hidden: tuple = (128, 128)
    embedding: str = "fourier"       # raw | fourier | inverse_cdf
    n_frequencies: int = 6
    init_seed: int = 0

    @property
    def embed_width(self) -> int:
        if self.embedding == "raw":
            return 1
        return 1 + 2 * self.n_frequencies

    @property
    def layer_sizes(self) -> tuple:
        return (self.dim + self.embed_width, *self.hidden, self.dim)


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 5000
    batch: int = 256
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.01
    ema_rate: float = 0.9999
    seed: int = 0
    proposal: str = "designed_eta"   # uniform_t | designed_eta
    weighting: str = "likelihood"


# ---------------------------------------------------------------------------
# eta embedding
# ---------------------------------------------------------------------------

def eta_features(config: NetworkConfig, schedule: ChannelSchedule, eta,
                 proposal=None) -> np.ndarray:
    """Embed ``eta`` as network inputs, shape [N, embed_width].

    ``raw`` feeds the affinely standardized coordinate; ``fourier`` adds
    sine/cosine features at dyadic frequencies; ``inverse_cdf`` standardizes
    through the CDF of the active proposal before the Fourier lift, which
    equalizes the training density of the embedded coordinate.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    e = schedule.endpoints
    if config.embedding == "inverse_cdf":
        if proposal is None:
            raise ValueError("inverse_cdf embedding needs the active proposal")
        u = np.asarray(proposal.cdf(eta), dtype=float)
    else:
        u = (eta - e.eta0) / e.width
    base = 2.0 * u - 1.0
    if config.embedding == "raw":
        return base[:, None]
    freqs = 2.0 ** np.arange(config.n_frequencies)
    ang = 2.0 * np.pi * u[:, None] * freqs[None, :]
    return np.concatenate([base[:, None], np.sin(ang), np.cos(ang)], axis=1)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _shapes(config: NetworkConfig):
    sizes = config.layer_sizes
    out = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        out.append((fan_in, fan_out))
    return out

def n_params(config: NetworkConfig) -> int:
    return sum(i * o + o for i, o in _shapes(config))


def init_params(config: NetworkConfig) -> np.ndarray:
    """Xavier-scaled Gaussian weights, zero biases, flattened."""
    rng = np.random.default_rng(config.init_seed)
    chunks = []
    for fan_in, fan_out in _shapes(config):
        chunks.append(rng.standard_normal(fan_in * fan_out) / math.sqrt(fan_in))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _unflatten(config: NetworkConfig, params: np.ndarray):
    layers = []
    off = 0
    for fan_in, fan_out in _shapes(config):
        W = params[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = params[off:off + fan_out]
        off += fan_out
        layers.append((W, b))
    return layers


def forward(config: NetworkConfig, params: np.ndarray, inputs: np.ndarray):
    """Forward pass; returns (outputs [N, D], caches for backprop)."""
    layers = _unflatten(config, params)
    h = np.asarray(inputs, dtype=float)
    caches = []
    for i, (W, b) in enumerate(layers):
        a = h @ W + b
        if i < len(layers) - 1:
            out = np.tanh(a)
            caches.append((h, out))
            h = out
        else:
            caches.append((h, None))
            h = a
    return h, caches


def _backward(config: NetworkConfig, params: np.ndarray, caches, d_out):
    layers = _unflatten(config, params)
    grads = [None] * len(layers)
    delta = d_out
    for i in reversed(range(len(layers))):
        W, _ = layers[i]
        h_in, act = caches[i]
        if i < len(layers) - 1:
            delta = delta * (1.0 - act * act)
        grads[i] = (h_in.T @ delta, delta.sum(axis=0))
        delta = delta @ W.T
    flat = []
    for gW, gb in grads:
        flat.append(gW.ravel())
        flat.append(gb)
    return np.concatenate(flat)


def loss_and_grad(config: NetworkConfig, params: np.ndarray,
                  inputs: np.ndarray, targets: np.ndarray,
                  sample_weights: np.ndarray | None = None):
    """Weighted half squared error; returns (loss, dloss/dparams).

    loss = mean_b c_b * 1/2 ||target_b - out_b||^2.
    """
    out, caches = forward(config, params, inputs)
    diff = out - np.asarray(targets, dtype=float)
    c = np.ones(out.shape[0]) if sample_weights is None \
        else np.asarray(sample_weights, dtype=float)
    loss = float(np.mean(c * 0.5 * np.sum(diff * diff, axis=1)))
    d_out = (c[:, None] * diff) / out.shape[0]
    return loss, _backward(config, params, caches, d_out)


def gradient_check(config: NetworkConfig, params: np.ndarray,
                   inputs: np.ndarray, targets: np.ndarray,
                   sample_weights: np.ndarray | None = None,
                   n_probe: int = 64, h: float = 1e-6, seed: int = 0):
    """Max relative error of analytic vs central-difference gradients."""
    _, g = loss_and_grad(config, params, inputs, targets, sample_weights)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(params), size=min(n_probe, len(params)), replace=False)
    worst = 0.0
    for i in idx:
        p = params.copy()
        p[i] += h
        lp, _ = loss_and_grad(config, p, inputs, targets, sample_weights)
        p[i] -= 2 * h
        lm, _ = loss_and_grad(config, p, inputs, targets, sample_weights)
        fd = (lp - lm) / (2 * h)
        denom = max(abs(fd), abs(g[i]), 1e-8)
        worst = max(worst, abs(fd - g[i]) / denom)
    return worst


# ---------------------------------------------------------------------------
# warm start
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WarmStartDataset:
    """Data pre-perturbed to the starting noise level, drawn once.

    ``rows = alpha(eta0) x + sigma(eta0) u`` with ``u`` stored implicitly by
    seeding; training then only adds noise beyond ``eta0``.
    """

    rows: np.ndarray
    eta0: float
    seed: int

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def warm_start(x: np.ndarray, schedule: ChannelSchedule, seed: int,
               noise=None) -> WarmStartDataset:
    noise = noise or GaussianNoise()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    u = noise.sample(rng, x.shape)
    eta0 = schedule.endpoints.eta0
    alpha0, sigma0 = schedule.coefficients_at(eta0)
    return WarmStartDataset(rows=alpha0 * x + sigma0 * u, eta0=eta0, seed=seed)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    network: NetworkConfig
    training: TrainingConfig
    params: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    ema: np.ndarray
    step: int = 0
    loss_trace: list = field(default_factory=list)

    @staticmethod
    def fresh(network: NetworkConfig, training: TrainingConfig) -> "TrainState":
        p = init_params(network)
        return TrainState(network=network, training=training, params=p,
                          adam_m=np.zeros_like(p), adam_v=np.zeros_like(p),
                          ema=np.zeros_like(p))

    @property
    def ema_params(self) -> np.ndarray:
        """Bias-corrected parameter average (zero-initialized shadow)."""
        r = self.training.ema_rate
        if self.step == 0 or r == 0.0:
            return self.params
        return self.ema / (1.0 - r ** self.step)


def adam_update(state: TrainState, grad: np.ndarray) -> None:
    """One decoupled-weight-decay Adam step followed by the EMA update."""
    tc = state.training
    state.step += 1
    state.adam_m = tc.beta1 * state.adam_m + (1 - tc.beta1) * grad
    state.adam_v = tc.beta2 * state.adam_v + (1 - tc.beta2) * grad * grad
    mhat = state.adam_m / (1 - tc.beta1 ** state.step)
    vhat = state.adam_v / (1 - tc.beta2 ** state.step)
    state.params = state.params * (1 - tc.learning_rate * tc.weight_decay) \
        - tc.learning_rate * mhat / (np.sqrt(vhat) + tc.eps)
    r = tc.ema_rate
    state.ema = r * state.ema + (1 - r) * state.params


def train(schedule: ChannelSchedule, data: WarmStartDataset,
          network: NetworkConfig, training: TrainingConfig,
          proposal) -> TrainState:
    """Noise-prediction training loop (Adam + EMA), fully seeded.

    Each step draws batch rows with replacement, ``eta`` from the proposal,
    and fresh Gaussian noise; the per-sample weight is
    ``w(eta) / rho(eta)`` so the batch loss is an unbiased estimate of the
    population objective.
    """
    state = TrainState.fresh(network, training)
    rng = np.random.default_rng(np.random.SeedSequence(training.seed))
    weighting = Weighting(training.weighting)
    gauss = GaussianNoise()
    for _ in range(training.steps):
        idx = rng.integers(0, data.rows.shape[0], size=training.batch)
        x = data.rows[idx]
        u = rng.random(training.batch)
        eta = proposal.sample_eta(u)
        n = gauss.sample(rng, x.shape)
        alpha, sigma = schedule.coefficients_at(eta)
        y = alpha[:, None] * x + sigma[:, None] * n
        feats = eta_features(network, schedule, eta, proposal)
        inputs = np.concatenate([y, feats], axis=1)
        c = loss_weight(schedule, eta, weighting) / proposal.density(eta)
        loss, grad = loss_and_grad(network, state.params, inputs, n, c)
        if not math.isfinite(loss):
            raise FloatingPointError(f"training diverged at step {state.step + 1}")
        adam_update(state, grad)
        state.loss_trace.append(loss)
    return state


@dataclass(frozen=True)
class NetworkScoreModel(ScoreModel):
    """Adapts a trained state to the noise-prediction interface."""

    schedule: ChannelSchedule
    network: NetworkConfig
    params: np.ndarray
    proposal: object = None

    @staticmethod
    def from_state(schedule, state: TrainState, use_ema: bool = True,
                   proposal=None) -> "NetworkScoreModel":
        p = state.ema_params if use_ema else state.params
        return NetworkScoreModel(schedule=schedule, network=state.network,
                                 params=p.copy(), proposal=proposal)

    def predict_noise(self, y, eta):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        eta = np.broadcast_to(np.asarray(eta, dtype=float), (y.shape[0],))
        feats = eta_features(self.network, self.schedule, eta, self.proposal)
        out, _ = forward(self.network, self.params,
                         np.concatenate([y, feats], axis=1))
        return out


# ---------------------------------------------------------------------------
# checkpoints: JSON with base64 little-endian float64 arrays
# ---------------------------------------------------------------------------

def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode()


def _decode(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").copy()


def save_checkpoint(path, state: TrainState) -> None:
    doc = {
        "network": asdict(state.network),
        "training": asdict(state.training),
        "step": state.step,
        "params": _encode(state.params),
        "adam_m": _encode(state.adam_m),
        "adam_v": _encode(state.adam_v),
        "ema": _encode(state.ema),
        "loss_trace": _encode(np.asarray(state.loss_trace, dtype=float)),
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)


def load_checkpoint(path) -> TrainState:
    with open(path) as f:
        doc = json.load(f)
    net = doc["network"]
    net["hidden"] = tuple(net["hidden"])
    return TrainState(
        network=NetworkConfig(**net),
        training=TrainingConfig(**doc["training"]),
        params=_decode(doc["params"]),
        adam_m=_decode(doc["adam_m"]),
        adam_v=_decode(doc["adam_v"]),
        ema=_decode(doc["ema"]),
        step=doc["step"],
        loss_trace=list(_decode(doc["loss_trace"])),
    )
