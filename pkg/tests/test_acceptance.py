"""End-to-end acceptance battery.

Each test covers one acceptance criterion and emits a single PASS/FAIL line
with the measured quantity and its tolerance.
"""

import math

import numpy as np
import pytest
from scipy import special

from snrlab.densities import (GaussianMixture, GaussianNoise, LaplaceNoise,
                              LogisticNoise, QuantizedGrid, UniformNoise)
from snrlab.dsm import (DensityScoreModel, PerturbedScoreModel, PredictorKind,
                        convert_predictor, loss_quadrature,
                        standard_normal_floor)
from snrlab.evaluate import (BoundMode, nll_bound, per_point_nll_quadrature,
                             tn_gap, uniform_dequant_offset)
from snrlab.identities import (debruijn_check, pointwise_bound_check,
                               theorem1_check, thermo_decomposition_check)
from snrlab.network import (NetworkConfig, NetworkScoreModel, TrainingConfig,
                            eta_features, gradient_check, init_params, train,
                            warm_start)
from snrlab.proposals import (DesignedEta, UniformT,
                              estimator_variance_report,
                              train_learned_proposal)
from snrlab.schedules import (ChannelSchedule, LogSnrEndpoints, Regime,
                              Sigmoid, conditional_variance,
                              conditional_variance_naive)

STD_NORMAL = GaussianMixture([1.0], [[0.0]], [1.0])
SHIFTED = GaussianMixture([1.0], [[1.0]], [1.0])
MIX2 = GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [0.5, 0.7])
ALL_NOISE = [GaussianNoise(), LaplaceNoise(), LogisticNoise(), UniformNoise()]
ENDPOINTS = LogSnrEndpoints(-8.7, 5.0)


def _vp():
    return ChannelSchedule(Sigmoid(), Regime.VP, ENDPOINTS)


def _sp():
    return ChannelSchedule(Sigmoid(), Regime.SP, ENDPOINTS)


def _report(name: str, ok: bool, detail: str) -> None:
    print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_criterion_01_kl_dissipation_slope():
    """One-sided KL difference quotients at vanishing smoothing match
    -1/2 x relative Fisher information, for every noise family."""
    worst = 0.0
    for noise in ALL_NOISE:
        for p, q in ((STD_NORMAL, SHIFTED), (MIX2, SHIFTED)):
            r = theorem1_check(p, q, noise)
            worst = max(worst, abs(r["gap"]))
    r_gauss = theorem1_check(STD_NORMAL, SHIFTED, GaussianNoise())
    slope_err = abs(r_gauss["fd_slope"] - (-0.5))
    ok = worst < 1e-3 and slope_err < 1e-4
    _report("criterion 1 (KL dissipation slope)", ok,
            f"max |gap| {worst:.3e} < 1e-3, gaussian slope error "
            f"{slope_err:.3e} < 1e-4")


def test_criterion_02_entropy_production_slope():
    """Entropy difference quotients match +1/2 x Fisher information and are
    independent of the smoothing noise family."""
    worst = 0.0
    spreads = []
    for density in (GaussianMixture([1.0], [[0.0]], [4.0]), MIX2):
        slopes = []
        for noise in ALL_NOISE:
            r = debruijn_check(density, noise)
            worst = max(worst, abs(r["gap"]))
            slopes.append(r["entropy_slope"])
        spreads.append(float(np.ptp(slopes)))
    ok = worst < 1e-3 and max(spreads) < 1e-3
    _report("criterion 2 (entropy production slope)", ok,
            f"max |gap| {worst:.3e} < 1e-3, cross-family slope spread "
            f"{max(spreads):.3e} < 1e-3")


def test_criterion_03_pointwise_bound_and_mc_agreement():
    """The per-point upper bound dominates -log q on sampled points for both
    regimes and both exact/perturbed scores; the Monte Carlo estimator agrees
    with quadrature within 3 standard errors at 1e5 total samples."""
    rng = np.random.default_rng(11)
    x100 = STD_NORMAL.sample(rng, 100)
    min_slack = np.inf
    for sch in (_vp(), _sp()):
        exact = DensityScoreModel(STD_NORMAL, sch)
        for model in (exact, PerturbedScoreModel(exact, delta=0.3)):
            r = pointwise_bound_check(x100, sch, STD_NORMAL, model=model,
                                      n_eta=128, n_herm=32)
            min_slack = min(min_slack, r["min_slack"])
    sch = _vp()
    model = DensityScoreModel(STD_NORMAL, sch)
    x20 = STD_NORMAL.sample(np.random.default_rng(12), 20)
    zs = []
    for mode in (BoundMode.UPPER, BoundMode.CALIBRATED):
        quad = per_point_nll_quadrature(x20, sch, model, mode,
                                        n_eta=128, n_herm=32)
        rep = nll_bound(x20, sch, model, DesignedEta(sch),
                        np.random.default_rng(13), n_samples=5000, mode=mode)
        diff = rep.per_point_nats - quad
        se = diff.std(ddof=1) / math.sqrt(diff.size)
        zs.append(abs(diff.mean()) / se)
    ok = min_slack >= -1e-6 and max(zs) < 3.0
    _report("criterion 3 (pointwise bound + MC agreement)", ok,
            f"min slack {min_slack:.3e} >= -1e-6, MC-vs-quadrature |z| "
            f"{max(zs):.2f} < 3 at 1e5 samples")


def test_criterion_04_decomposition_gap_scaling():
    """The cross-entropy decomposition residual shrinks at least linearly in
    the starting noise-to-signal ratio (log-log slope >= 0.9)."""
    gaps, stildes = [], []
    for sigma0_sq in (1e-2, 1e-3, 1e-4):
        eta0 = math.log(sigma0_sq / (1.0 - sigma0_sq))
        sch = ChannelSchedule(Sigmoid(), Regime.VP,
                              LogSnrEndpoints(eta0, 5.0))
        r = thermo_decomposition_check(STD_NORMAL, sch, STD_NORMAL,
                                       n_eta=160, n_nodes=320)
        gaps.append(abs(r["gap"]))
        stildes.append(r["stilde0"])
    slope = np.polyfit(np.log(stildes), np.log(gaps), 1)[0]
    ok = slope >= 0.9
    _report("criterion 4 (decomposition gap scaling)", ok,
            f"log-log slope {slope:.3f} >= 0.9 over start noise "
            f"1e-2 .. 1e-4")


def test_criterion_05_importance_sampling_variance():
    """The signal-weighted proposal reduces estimator variance versus the
    flat-in-time baseline at the 95% level over 20 paired repeats, and the
    learned proposal matches or beats the baseline after 500 steps; all
    estimator means agree within 3 joint standard errors."""
    sch = _vp()
    model = DensityScoreModel(STD_NORMAL, sch)
    x = STD_NORMAL.sample(np.random.default_rng(21), 4096)
    learned, _ = train_learned_proposal(sch, x, model,
                                        np.random.default_rng(22), steps=500)
    props = {"uniform_t": UniformT(sch), "designed_eta": DesignedEta(sch),
             "learned_monotone": learned}
    rep = estimator_variance_report(sch, x, model, props, seed=23,
                                    n_samples=2000, n_repeats=20)
    des = rep["comparisons"]["designed_eta"]
    lea = rep["comparisons"]["learned_monotone"]
    max_z = max(des["mean_agreement_z"], lea["mean_agreement_z"])
    ok = (des["log_variance_ratio_upper95"] < 0.0
          and lea["log_variance_ratio_upper95"] < 0.0
          and max_z < 3.0)
    _report("criterion 5 (importance-sampling variance)", ok,
            f"designed ratio {des['variance_ratio']:.3f} "
            f"(UB95 exp {math.exp(des['log_variance_ratio_upper95']):.3f} < 1), "
            f"learned ratio {lea['variance_ratio']:.3f} "
            f"(UB95 exp {math.exp(lea['log_variance_ratio_upper95']):.3f} <= 1), "
            f"mean agreement |z| {max_z:.2f} < 3")


def test_criterion_06_predictor_round_trips():
    """Every pair of predictor parameterizations round-trips to 1e-12 on
    1000 random tuples."""
    rng = np.random.default_rng(31)
    kinds = list(PredictorKind)
    worst = 0.0
    for _ in range(1000):
        y = rng.standard_normal((1, 2))
        val = rng.standard_normal((1, 2))
        alpha = float(rng.uniform(0.05, 0.999))
        sigma = float(np.sqrt(1 - alpha ** 2))
        rates = (float(rng.uniform(-1, 1)), float(rng.uniform(0.05, 1)))
        i, j = rng.integers(0, len(kinds), 2)
        there = convert_predictor(kinds[i], kinds[j], val, y, alpha, sigma,
                                  rates)
        back = convert_predictor(kinds[j], kinds[i], there, y, alpha, sigma,
                                 rates)
        denom = max(1.0, float(np.max(np.abs(val))))
        worst = max(worst, float(np.max(np.abs(back - val))) / denom)
    ok = worst < 1e-12
    _report("criterion 6 (predictor round trips)", ok,
            f"max round-trip error {worst:.3e} < 1e-12 on 1000 tuples")


def test_criterion_07_stable_transition_variance():
    """The stabilized transition variance matches a 60-digit oracle to 1e-9
    relative error on a grid including nearly-degenerate steps, where the
    naive expression demonstrably loses at least 6 digits."""
    import mpmath as mp
    mp.mp.dps = 60
    sch = _vp()
    rng = np.random.default_rng(41)
    eta_s = rng.uniform(-8.7, 4.99, 10_000)
    dt = 10.0 ** rng.uniform(-13.0, 0.5, 10_000)
    eta_t = np.minimum(eta_s + dt, 5.0)
    got = conditional_variance(sch, eta_s, eta_t)
    naive = conditional_variance_naive(sch, eta_s, eta_t)

    def oracle(a, b):
        a, b = mp.mpf(a), mp.mpf(b)
        return float(1 - mp.e ** (mp.log(1 + mp.e ** a)
                                  - mp.log(1 + mp.e ** b)))

    want = np.array([oracle(a, b) for a, b in zip(eta_s, eta_t)])
    rel = np.abs(got - want) / np.abs(want)
    rel_naive = np.abs(naive - want) / np.abs(want)
    ok = rel.max() < 1e-9 and rel_naive.max() > 1e-6
    _report("criterion 7 (stable transition variance)", ok,
            f"stable max rel err {rel.max():.3e} < 1e-9; naive max rel err "
            f"{rel_naive.max():.3e} (> 1e-6, i.e. >= 6 digits lost)")


def test_criterion_08_trained_network_near_floor():
    """A trained 1D denoiser reaches within 10% of the analytic loss floor
    after 5000 steps, and the hand-rolled gradients match finite differences
    to 1e-4."""
    sch = _vp()
    rng = np.random.default_rng(51)
    x = rng.standard_normal((8192, 1))
    ws = warm_start(x, sch, seed=52)
    cfg = NetworkConfig(dim=1, init_seed=53)
    tc = TrainingConfig(steps=5000, batch=256, seed=54)
    prop = DesignedEta(sch)
    state = train(sch, ws, cfg, tc, prop)
    model = NetworkScoreModel.from_state(sch, state)
    est = loss_quadrature(sch, STD_NORMAL, model, n_eta=128, n_inner=96)
    floor = standard_normal_floor(sch, 1)
    ratio = est.value / floor
    params = init_params(cfg)
    inputs = np.concatenate(
        [rng.standard_normal((64, 1)),
         eta_features(cfg, sch, rng.uniform(-8, 4, 64))], axis=1)
    grad_err = gradient_check(cfg, params, inputs,
                              rng.standard_normal((64, 1)),
                              rng.uniform(0.5, 2.0, 64))
    ok = ratio <= 1.10 and grad_err <= 1e-4
    _report("criterion 8 (trained network near floor)", ok,
            f"loss/floor {ratio:.4f} <= 1.10 "
            f"(loss {est.value:.4f}, floor {floor:.4f}), gradient check "
            f"{grad_err:.3e} <= 1e-4")


def test_criterion_09_dequantization_codelength():
    """The truncated-normal entropy-deficit constant re-derives by stratified
    Monte Carlo to 1e-4, and the calibrated estimator prices a uniform
    256-level source at 8.00 +/- 0.02 bits per dimension."""
    # stratified inverse-CDF Monte Carlo entropy of TN(0, 1, -3, 3)
    n = 200_000
    rng = np.random.default_rng(61)
    lo, hi = special.ndtr(-3.0), special.ndtr(3.0)
    u = (np.arange(n) + rng.random(n)) / n
    z = special.ndtri(lo + (hi - lo) * u)
    logp = -0.5 * z ** 2 - 0.5 * math.log(2 * math.pi) \
        - math.log(special.erf(3.0 / math.sqrt(2.0)))
    gap_mc = 0.5 * math.log(2 * math.pi * math.e) + logp.mean()
    const_err = abs(gap_mc - tn_gap(3.0))

    grid = QuantizedGrid(256)
    sch = ChannelSchedule(Sigmoid(), Regime.VP, LogSnrEndpoints(-10.0, 5.0))
    a0, s0 = (float(v) for v in sch.coefficients_at(-10.0))
    model = DensityScoreModel(grid.smoothed(1.0, (s0 / a0) ** 2), sch)
    x = grid.dequantized_uniform(np.random.default_rng(62), 256)
    nats = per_point_nll_quadrature(x, sch, model, BoundMode.CALIBRATED,
                                    n_eta=96, n_herm=24)
    bpd = (nats.mean() - uniform_dequant_offset(grid, 1)) / math.log(2)
    se = nats.std(ddof=1) / math.sqrt(nats.size) / math.log(2)
    ok = const_err < 1e-4 and abs(bpd - 8.0) < 0.02
    _report("criterion 9 (dequantization codelength)", ok,
            f"entropy-deficit constant MC error {const_err:.2e} < 1e-4; "
            f"uniform 256-level source {bpd:.4f} +/- {se:.4f} bits/dim, "
            f"|bpd - 8| {abs(bpd - 8.0):.4f} < 0.02")


def test_criterion_10_cli_reproducibility(tmp_path):
    """Identical configuration and seed produce byte-identical artifacts."""
    from snrlab.cli import run_command

    def run_all(root):
        assert run_command(["train", "--out", str(root / "t"),
                            "--steps", "40", "--seed", "9"]) == 0
        assert run_command(["eval-nll", "--out", str(root / "e"),
                            "--data", "quantized_uniform",
                            "--dequant", "uniform", "--n-points", "20",
                            "--samples", "200", "--seed", "9"]) == 0
        return {str(p.relative_to(root)): p.read_bytes()
                for p in sorted(root.rglob("*")) if p.is_file()}

    a = run_all(tmp_path / "a")
    b = run_all(tmp_path / "b")
    ok = a == b
    _report("criterion 10 (CLI reproducibility)", ok,
            f"{len(a)} artifacts byte-identical across two runs "
            "with the same config and seed")
