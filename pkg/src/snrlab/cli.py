"""Command-line entry points for the verification and experiment suites.

Every run resolves its configuration as defaults <- JSON config file <- CLI
flags, then writes ``resolved_config.json`` (with its SHA-256 hash) next to
the artifacts so that identical configurations and seeds reproduce outputs
byte for byte.  Exit codes: 0 success, 1 invariant or bound violation,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import densities, dsm, evaluate, identities, network, proposals
from .densities import (GaussianMixture, NOISE_FAMILIES, QuantizedGrid)
from .schedules import (FAMILIES, ChannelSchedule, GeneralizedSigmoid,
                        LogSnrEndpoints, Regime, Sigmoid, TanhSquash,
                        VeExponential)

__all__ = ["main", "run_command"]


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

DEFAULTS = {
    "seed": 0,
    "schedule": "vp",
    "family": "sigmoid",
    "a": 1.0,
    "eta0": -8.7,
    "eta1": 5.0,
    "noise": "gaussian",
    "data": "standard_normal",
    "proposals": "uniform_t,designed_eta",
    "steps": 5000,
    "batch": 256,
    "samples": 1000,
    "n_points": 100,
    "n_repeats": 20,
    "learning_rate": 2e-4,
    "dequant": "none",
    "check": "all",
    "checkpoint": "",
    "mode": "calibrated",
    "n_steps_sampler": 128,
}


def _resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config) as f:
            loaded = json.load(f)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["command"] = args.command
    return cfg


class UsageError(Exception):
    pass


class ViolationError(Exception):
    pass


def build_schedule(cfg: dict) -> ChannelSchedule:
    regime = Regime(cfg["schedule"])
    name = cfg["family"]
    if name == "generalized_sigmoid":
        family = GeneralizedSigmoid(a=float(cfg["a"]))
    elif name in FAMILIES:
        family = FAMILIES[name]()
    else:
        raise UsageError(f"unknown family {name!r}")
    return ChannelSchedule(family, regime,
                           LogSnrEndpoints(float(cfg["eta0"]), float(cfg["eta1"])))


DATASETS = {
    "standard_normal": lambda: GaussianMixture([1.0], [[0.0]], [1.0]),
    "mixture2": lambda: GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [0.5, 0.7]),
    "quantized_uniform": lambda: QuantizedGrid(256),
}


def build_density(cfg: dict):
    name = cfg["data"]
    if name not in DATASETS:
        raise UsageError(f"unknown data source {name!r}; "
                         f"options: {sorted(DATASETS)}")
    return DATASETS[name]()


def build_proposal(name: str, schedule: ChannelSchedule):
    if name == "uniform_t":
        return proposals.UniformT(schedule)
    if name == "designed_eta":
        return proposals.DesignedEta(schedule)
    raise UsageError(f"unknown proposal {name!r} (learned proposals are "
                     "trained inside ablate-is)")


# ---------------------------------------------------------------------------
# deterministic artifact writers
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1, default=_json_default)
        f.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _emit_config(out: Path, cfg: dict) -> None:
    blob = json.dumps(cfg, sort_keys=True, indent=1)
    digest = hashlib.sha256(blob.encode()).hexdigest()
    doc = dict(cfg)
    doc["config_sha256"] = digest
    write_json(out / "resolved_config.json", doc)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_verify(cfg: dict, out: Path) -> int:
    known = ["theorem1", "debruijn", "second_order", "thermo", "pointwise"]
    checks = known if cfg["check"] == "all" else cfg["check"].split(",")
    bad = set(checks) - set(known)
    if bad:
        raise UsageError(f"unknown checks: {sorted(bad)}; options: {known}")
    noise = NOISE_FAMILIES[cfg["noise"]]
    p = GaussianMixture([1.0], [[0.0]], [1.0])
    q = GaussianMixture([1.0], [[1.0]], [1.0])
    mix = DATASETS["mixture2"]()
    rows = []
    failed = False
    if "theorem1" in checks:
        for name, (a, b) in {"gauss_pair": (p, q), "mix_pair": (mix, q)}.items():
            r = identities.theorem1_check(a, b, noise)
            ok = abs(r["gap"]) < 1e-3
            failed |= not ok
            rows.append(["theorem1", name, r["fd_slope"],
                         r["minus_half_relative_fisher"], r["gap"], 1e-3, ok])
    if "debruijn" in checks:
        for name, d in {"wide_gaussian": GaussianMixture([1.0], [[0.0]], [4.0]),
                        "mixture2": mix}.items():
            r = identities.debruijn_check(d, noise)
            ok = abs(r["gap"]) < 1e-3
            failed |= not ok
            rows.append(["debruijn", name, r["entropy_slope"],
                         r["half_fisher_information"], r["gap"], 1e-3, ok])
    if "second_order" in checks:
        r = identities.second_order_expansion_check(p, q, noise)
        ok = bool(r["superlinear"])
        failed |= not ok
        rows.append(["second_order", "gauss_pair", r["residuals"][0],
                     0.0, r["ratio_quarter"], 0.15, ok])
    if "thermo" in checks:
        sch = build_schedule(cfg)
        r = identities.thermo_decomposition_check(p, sch, p,
                                                  n_eta=128, n_nodes=256)
        ok = abs(r["gap"]) < 50.0 * r["stilde0"] + 1e-6
        failed |= not ok
        rows.append(["thermo", "self_model", r["lhs_cross_entropy"],
                     r["rhs"], r["gap"], 50.0 * r["stilde0"], ok])
    if "pointwise" in checks:
        sch = build_schedule(cfg)
        density = build_density(cfg)
        rng = np.random.default_rng(int(cfg["seed"]))
        x = density.sample(rng, int(cfg["n_points"]))
        r = identities.pointwise_bound_check(x, sch, density)
        ok = r["min_slack"] >= -1e-6
        failed |= not ok
        rows.append(["pointwise", cfg["data"], float(r["bound"].mean()),
                     float(r["neg_log_q"].mean()), r["min_slack"], -1e-6, ok])
    write_csv(out / "verify.csv",
              ["check", "case", "value", "reference", "gap", "tolerance", "pass"],
              rows)
    write_json(out / "verify.json",
               {"rows": [dict(zip(["check", "case", "value", "reference",
                                   "gap", "tolerance", "pass"], r))
                         for r in rows],
                "all_passed": not failed})
    if failed:
        raise ViolationError("one or more identity checks failed")
    return 0


def cmd_ablate_schedule(cfg: dict, out: Path) -> int:
    data = GaussianMixture([1.0], [[0.0]], [1.0])
    rows = []
    cases = [
        ("vp", Sigmoid(), None),
        ("vp", GeneralizedSigmoid(0.5), 0.5),
        ("vp", GeneralizedSigmoid(2.0), 2.0),
        ("vp", TanhSquash(), None),
        ("sp", Sigmoid(), None),
        ("ve", VeExponential(), None),
    ]
    for regime, family, a in cases:
        eta0, eta1 = float(cfg["eta0"]), float(cfg["eta1"])
        if regime == "ve":
            # geometric noise ladder from 0.01 to 50 in sigma
            eta0, eta1 = 2.0 * math.log(0.01), 2.0 * math.log(50.0)
        sch = ChannelSchedule(family, Regime(regime),
                              LogSnrEndpoints(eta0, eta1))
        model = dsm.DensityScoreModel(data, sch)
        Z, method = proposals.designed_normalizer(sch)
        lq = dsm.loss_quadrature(sch, data, model, n_eta=128, n_inner=128)
        rows.append([regime, family.name, a if a is not None else "",
                     eta0, eta1, Z, method, lq.value,
                     dsm.zero_predictor_loss(sch, 1)])
    write_csv(out / "schedule_ablation.csv",
              ["regime", "family", "a", "eta0", "eta1",
               "designed_normalizer", "normalizer_method",
               "optimal_loss", "zero_predictor_loss"], rows)
    return 0


def cmd_ablate_is(cfg: dict, out: Path) -> int:
    sch = build_schedule(cfg)
    data = build_density(cfg)
    if isinstance(data, QuantizedGrid):
        raise UsageError("ablate-is needs a continuous data source")
    model = dsm.DensityScoreModel(data, sch)
    rng = np.random.default_rng(int(cfg["seed"]))
    x = data.sample(rng, 4096)
    props = {}
    for name in cfg["proposals"].split(","):
        name = name.strip()
        if name == "learned_monotone":
            prop, _ = proposals.train_learned_proposal(
                sch, x, model, np.random.default_rng(int(cfg["seed"]) + 1),
                steps=min(int(cfg["steps"]), 1000), batch=int(cfg["batch"]))
            props[name] = prop
        else:
            props[name] = build_proposal(name, sch)
    rep = proposals.estimator_variance_report(
        sch, x, model, props, seed=int(cfg["seed"]),
        n_samples=int(cfg["samples"]), n_repeats=int(cfg["n_repeats"]))
    write_json(out / "is_report.json", rep)
    rows = [[name, r["mean"], r["std_error"], r["per_sample_variance"]]
            for name, r in rep["proposals"].items()]
    write_csv(out / "is_ablation.csv",
              ["proposal", "mean", "std_error", "per_sample_variance"], rows)
    return 0


def cmd_train(cfg: dict, out: Path) -> int:
    sch = build_schedule(cfg)
    data = build_density(cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    if isinstance(data, QuantizedGrid):
        x = data.dequantized_uniform(rng, 8192)
    else:
        x = data.sample(rng, 8192)
    ws = network.warm_start(x, sch, seed=int(cfg["seed"]) + 1)
    net = network.NetworkConfig(dim=x.shape[1], init_seed=int(cfg["seed"]) + 2)
    tc = network.TrainingConfig(steps=int(cfg["steps"]), batch=int(cfg["batch"]),
                                learning_rate=float(cfg["learning_rate"]),
                                seed=int(cfg["seed"]) + 3)
    prop = build_proposal(tc.proposal, sch)
    state = network.train(sch, ws, net, tc, prop)
    network.save_checkpoint(out / "checkpoint.json", state)
    write_csv(out / "loss_trace.csv", ["step", "loss"],
              [[i + 1, v] for i, v in enumerate(state.loss_trace)])
    return 0


def _model_from_cfg(cfg: dict, sch: ChannelSchedule, data):
    if cfg["checkpoint"]:
        state = network.load_checkpoint(cfg["checkpoint"])
        prop = build_proposal(state.training.proposal, sch)
        return network.NetworkScoreModel.from_state(sch, state, proposal=prop)
    if isinstance(data, QuantizedGrid):
        a0, s0 = (float(v) for v in
                  sch.coefficients_at(sch.endpoints.eta0))
        base = data.smoothed(1.0, (s0 / a0) ** 2)
        return dsm.DensityScoreModel(base, sch)
    return dsm.DensityScoreModel(data, sch)


def cmd_eval_nll(cfg: dict, out: Path) -> int:
    sch = build_schedule(cfg)
    data = build_density(cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    dequant = evaluate.DequantMode(cfg["dequant"])
    quant_grid = data if isinstance(data, QuantizedGrid) else None
    if isinstance(data, QuantizedGrid):
        if dequant is evaluate.DequantMode.TN:
            _, eta_eps = evaluate.truncated_normal_dequant_offset(sch, 1,
                                                                  data.levels)
            a, s = (float(v) for v in sch.coefficients_at(eta_eps))
            half = 0.5 * data.bin_width
            x = data.sample(rng, int(cfg["n_points"])) + half \
                + (s / a) * evaluate.tn_sample(rng, (int(cfg["n_points"]), 1))
        else:
            x = data.dequantized_uniform(rng, int(cfg["n_points"]))
    else:
        if dequant is not evaluate.DequantMode.NONE:
            raise UsageError("dequantization requires a quantized data source")
        x = data.sample(rng, int(cfg["n_points"]))
    model = _model_from_cfg(cfg, sch, data)
    prop = proposals.DesignedEta(sch)
    rep = evaluate.nll_bound(x, sch, model, prop,
                             np.random.default_rng(int(cfg["seed"]) + 1),
                             n_samples=int(cfg["samples"]),
                             mode=evaluate.BoundMode(cfg["mode"]),
                             dequant=dequant, quant_grid=quant_grid)
    write_json(out / "nll_report.json", rep.summary())
    write_csv(out / "nll_points.csv", ["index", "nats"],
              [[i, v] for i, v in enumerate(rep.per_point_nats)])
    return 0


def cmd_sample(cfg: dict, out: Path) -> int:
    sch = build_schedule(cfg)
    data = build_density(cfg)
    model = _model_from_cfg(cfg, sch, data)
    rng = np.random.default_rng(int(cfg["seed"]))
    dim = 1 if isinstance(data, QuantizedGrid) else data.dim
    xs = evaluate.ancestral_sample(sch, model, rng, int(cfg["n_points"]), dim,
                                   n_steps=int(cfg["n_steps_sampler"]))
    write_csv(out / "samples.csv",
              [f"x{d}" for d in range(xs.shape[1])], xs.tolist())
    return 0


def cmd_report(cfg: dict, out: Path) -> int:
    rows = []
    for path in sorted(out.glob("**/*.json")):
        if path.name == "resolved_config.json":
            continue
        with open(path) as f:
            doc = json.load(f)
        flat = _flatten(doc)
        for k, v in flat.items():
            rows.append([str(path.relative_to(out)), k, v])
    write_csv(out / "report.csv", ["artifact", "key", "value"], rows)
    return 0


def _flatten(doc, prefix=""):
    out = {}
    if isinstance(doc, dict):
        for k, v in doc.items():
            out.update(_flatten(v, f"{prefix}{k}."))
    elif isinstance(doc, list):
        out[prefix[:-1]] = json.dumps(doc)
    else:
        out[prefix[:-1]] = doc
    return out


COMMANDS = {
    "verify": cmd_verify,
    "ablate-schedule": cmd_ablate_schedule,
    "ablate-is": cmd_ablate_is,
    "train": cmd_train,
    "eval-nll": cmd_eval_nll,
    "sample": cmd_sample,
    "report": cmd_report,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snrlab",
        description="Channel-schedule verification and likelihood experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--out", required=True, help="artifact directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--schedule", choices=["vp", "sp", "ve"], default=None)
        sp.add_argument("--family", default=None)
        sp.add_argument("--a", type=float, default=None,
                        help="generalized sigmoid exponent")
        sp.add_argument("--eta0", type=float, default=None)
        sp.add_argument("--eta1", type=float, default=None)
        sp.add_argument("--noise", choices=sorted(NOISE_FAMILIES), default=None)
        sp.add_argument("--data", default=None)
        sp.add_argument("--proposals", default=None)
        sp.add_argument("--steps", type=int, default=None)
        sp.add_argument("--batch", type=int, default=None)
        sp.add_argument("--samples", type=int, default=None)
        sp.add_argument("--n-points", dest="n_points", type=int, default=None)
        sp.add_argument("--n-repeats", dest="n_repeats", type=int, default=None)
        sp.add_argument("--learning-rate", dest="learning_rate", type=float,
                        default=None)
        sp.add_argument("--dequant", choices=["none", "uniform", "tn"],
                        default=None)
        sp.add_argument("--check", default=None,
                        help="comma-separated identity checks, or 'all'")
        sp.add_argument("--checkpoint", default=None)
        sp.add_argument("--mode", choices=["upper", "calibrated"], default=None)
    return parser


def run_command(argv) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _emit_config(out, cfg)
        return COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ViolationError, FloatingPointError,
            identities.NumericalInconsistencyError) as exc:
        print(f"violation: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
