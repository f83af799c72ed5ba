"""Command-line front end: generate, fit, run, sweep and verify.

Every subcommand reads an optional JSON config whose keys match the long
flag names (dashes as underscores); flags given on the command line win.
Outputs go under ``--out`` together with a ``manifest.json``.
"""

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import FeatureModel, FrontierPolicy, read_traces, sample_traces, write_traces
from .evalbench import (
    MonteCarloConfig,
    accuracy_curve,
    evaluate_traces,
    verify_aep,
    verify_asymptotic,
    verify_error_bounds,
    verify_tail,
    write_rows,
)
from .fit import fit_offline
from .gnn import GinScorer, GinWeights, OracleScorer
from .kernels import BUNDLED_MODELS, bundled_models, load_models
from .msprt import SdrConfig, write_outcomes, write_trajectories

EXIT_OK, EXIT_INVALID, EXIT_CHECK_FAILED = 0, 2, 3
RULE_ALIASES = {"msprt": "markov", "markov": "markov", "naive": "naive",
                "single-chain": "single-chain", "gnn": "gnn"}
THEOREMS = ("error-bounds", "tail", "asymptotic", "aep")


class ConfigError(ValueError):
    pass


def _versions():
    import scipy
    import sklearn

    return {"cascade_sdr": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def _resolve(args, defaults):
    """Merge defaults < config file < explicit flags."""
    cfg = dict(defaults)
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"{args.config}: unknown config keys {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg.get("seed") is None:
        raise ConfigError("seed is required (--seed or 'seed' in the config)")
    if cfg.get("out") is None:
        raise ConfigError("output directory is required (--out or 'out' in the config)")
    return cfg


def _write_manifest(out, command, cfg, outputs):
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
        "versions": _versions(),
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _models(cfg):
    if (cfg.get("model") is None) == (cfg.get("bundled") is None):
        raise ConfigError("give exactly one model source: --model FILE or --bundled NAME")
    if cfg.get("bundled") is not None:
        return bundled_models(cfg["bundled"])
    path = Path(cfg["model"])
    if not path.exists():
        raise ConfigError(f"model file {path} does not exist")
    return load_models(path)


def _traces(cfg, key="traces"):
    if cfg.get(key) is None:
        raise ConfigError(f"--{key} is required")
    path = Path(cfg[key])
    if not path.exists():
        raise ConfigError(f"trace file {path} does not exist")
    return read_traces(path)


def _rule(cfg):
    try:
        return RULE_ALIASES[cfg["rule"]]
    except KeyError:
        raise ConfigError(f"unknown rule {cfg['rule']!r}; choose from {sorted(RULE_ALIASES)}") from None


def _scorer(cfg, models):
    source = cfg.get("scorer") or "oracle"
    if source == "oracle":
        return OracleScorer(models)
    if source.startswith("gin:"):
        return GinScorer(GinWeights.load(source[4:]))
    raise ConfigError(f"unknown scorer {source!r}; use 'oracle' or 'gin:WEIGHTS.json'")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


GENERATE = {"config": None, "seed": None, "out": None, "model": None, "bundled": None,
            "n_per_class": 100, "horizon": 50, "policy": "uniform", "feature_dim": None}


def cmd_generate(cfg):
    models = _models(cfg)
    if int(cfg["horizon"]) < 1:
        raise ConfigError("horizon must be ≥ 1")
    features = None
    if cfg["feature_dim"]:
        features = FeatureModel.separated(models.n_states, int(cfg["feature_dim"]))
    traces = sample_traces(models, int(cfg["n_per_class"]), int(cfg["horizon"]),
                           FrontierPolicy.parse(cfg["policy"]), int(cfg["seed"]), features)
    out = Path(cfg["out"])
    write_traces(traces, out / "traces.jsonl")
    return ["traces.jsonl"], EXIT_OK


FIT = {"config": None, "seed": None, "out": None, "traces": None, "classifier": "identity",
       "z_count": None, "s": None, "priors": "uniform"}


def cmd_fit(cfg):
    traces = _traces(cfg)
    res = fit_offline(traces, None, cfg["classifier"], cfg["s"], cfg["z_count"],
                      cfg["priors"], seed=int(cfg["seed"]))
    out = Path(cfg["out"])
    res.save(out / "model.json", out / "fit.json")
    return ["model.json", "fit.json"], EXIT_OK


RUN = {"config": None, "seed": None, "out": None, "traces": None, "model": None, "bundled": None,
       "rule": "msprt", "scorer": None, "a": 0.1}


def _sdr(cfg, models, a):
    rule = _rule(cfg)
    scorer = _scorer(cfg, models) if rule == "gnn" else None
    return SdrConfig(a, "markov" if rule == "gnn" else rule), scorer


def cmd_run(cfg):
    models = _models(cfg)
    traces = _traces(cfg)
    sdr, scorer = _sdr(cfg, models, cfg["a"])
    outs = evaluate_traces(traces, models, sdr, scorer)
    out = Path(cfg["out"])
    write_outcomes(outs, out / "outcomes.csv")
    write_trajectories(outs, out / "trajectories.json")
    return ["outcomes.csv", "trajectories.json"], EXIT_OK


SWEEP = dict(RUN, a_grid=None, deadlines=None)


def cmd_sweep(cfg):
    models = _models(cfg)
    traces = _traces(cfg)
    out = Path(cfg["out"])
    files = []
    if cfg["a_grid"]:
        rows = []
        for a in cfg["a_grid"]:
            sdr, scorer = _sdr(cfg, models, a)
            outs = evaluate_traces(traces, models, sdr, scorer)
            rows.append({"a": a,
                         "accuracy": float(np.mean([o.decision == t.label for o, t in zip(outs, traces)])),
                         "mean_stop": float(np.mean([o.stop_time for o in outs]))})
        write_rows(rows, out / "a_sweep.csv")
        files.append("a_sweep.csv")
    if cfg["deadlines"]:
        sdr, scorer = _sdr(cfg, models, cfg["a"])
        curve = accuracy_curve(evaluate_traces(traces, models, sdr, scorer), cfg["deadlines"])
        write_rows(curve.rows(), out / "accuracy_curve.csv")
        _dump({"auc": curve.auc, "deadlines": curve.deadlines, "accuracy": curve.accuracy},
              out / "accuracy_curve.json")
        files += ["accuracy_curve.csv", "accuracy_curve.json"]
    if not files:
        raise ConfigError("sweep needs --a-grid and/or --deadlines")
    return files, EXIT_OK


VERIFY = {"config": None, "seed": None, "out": None, "model": None, "bundled": None,
          "theorem": "error-bounds", "a": 0.1, "a_grid": None, "trials": 2000,
          "horizon": 10_000, "policy": "single", "k": 0, "j": 1, "length": 20_000,
          "rule": "msprt", "scorer": None, "xi": None, "threads": 1}


def cmd_verify(cfg):
    models = _models(cfg)
    theorem = cfg["theorem"]
    if theorem not in THEOREMS:
        raise ConfigError(f"unknown theorem {theorem!r}; choose from {THEOREMS}")
    mc = MonteCarloConfig(int(cfg["trials"]), int(cfg["horizon"]), int(cfg["seed"]),
                          cfg["policy"], threads=int(cfg["threads"]))
    out = Path(cfg["out"])
    rows = None
    if theorem == "error-bounds":
        scorer = _scorer(cfg, models) if _rule(cfg) == "gnn" else None
        xi = cfg["xi"] if cfg["xi"] is not None else (1.0 if scorer is not None else None)
        rep = verify_error_bounds(models, mc, cfg["a"], scorer, xi)
        passed = rep.passed
    elif theorem == "tail":
        rep = verify_tail(models, int(cfg["k"]), mc, cfg["a"])
        passed, rows = rep.passed, rep.rows()
    elif theorem == "asymptotic":
        grid = cfg["a_grid"] or [10.0**-i for i in range(1, 7)]
        rep = verify_asymptotic(models, int(cfg["k"]), grid, mc)
        passed, rows = rep.passed, rep.rows()
    else:
        rep = verify_aep(models, int(cfg["k"]), int(cfg["j"]), int(cfg["length"]),
                         cfg["policy"], int(cfg["seed"]))
        passed, rows = rep.rel_error <= 0.02, rep.rows()
    report = rep.to_dict()
    report["passed"] = bool(passed)
    _dump(report, out / "report.json")
    files = ["report.json"]
    if rows is not None:
        write_rows(rows, out / "report.csv")
        files.append("report.csv")
    status = "PASS" if passed else "FAIL"
    print(f"{theorem}: {status}")
    return files, EXIT_OK if passed else EXIT_CHECK_FAILED


COMMANDS = {
    "generate": (cmd_generate, GENERATE, "sample labelled traces from a model set"),
    "fit": (cmd_fit, FIT, "estimate initial and transition models from traces"),
    "run": (cmd_run, RUN, "run a sequential rule on every trace"),
    "sweep": (cmd_sweep, SWEEP, "accuracy over a threshold grid or a deadline grid"),
    "verify": (cmd_verify, VERIFY, "Monte Carlo check of a stopping-time or error result"),
}


def _floats(text):
    return [float(v) for v in text.split(",")]


def _ints(text):
    return [int(v) for v in text.split(",")]


def build_parser():
    p = argparse.ArgumentParser(prog="cascade-sdr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, defaults, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", help="JSON file with default values for any flag")
        sp.add_argument("--seed", type=int, help="base seed (required)")
        sp.add_argument("--out", help="output directory (required)")
        if "model" in defaults:
            sp.add_argument("--model", help="model JSON file")
            sp.add_argument("--bundled", choices=BUNDLED_MODELS, help="bundled model set")
        if "traces" in defaults:
            sp.add_argument("--traces", help="trace file (JSON lines)")
        if name == "generate":
            sp.add_argument("--n-per-class", type=int)
            sp.add_argument("--horizon", type=int, help="events per trace")
            sp.add_argument("--policy", help="uniform | single | spawn:P")
            sp.add_argument("--feature-dim", type=int, help="also draw d-dimensional node features")
        if name == "fit":
            sp.add_argument("--classifier", choices=("identity", "kmeans"))
            sp.add_argument("--z-count", type=int, help="number of edge types (k-means)")
            sp.add_argument("--s", type=float, help="DCB pseudo-count (default: number of types)")
            sp.add_argument("--priors", choices=("uniform", "empirical"))
        if "rule" in defaults:
            sp.add_argument("--rule", choices=sorted(RULE_ALIASES))
            sp.add_argument("--scorer", help="oracle | gin:WEIGHTS.json (rule gnn)")
            sp.add_argument("--a", type=float, help="threshold parameter in (0, 1)")
        if name == "sweep":
            sp.add_argument("--a-grid", type=_floats, help="comma-separated thresholds")
            sp.add_argument("--deadlines", type=_ints, help="comma-separated deadlines")
        if name == "verify":
            sp.add_argument("--theorem", choices=THEOREMS)
            sp.add_argument("--a-grid", type=_floats)
            sp.add_argument("--trials", type=int, help="trials per hypothesis")
            sp.add_argument("--horizon", type=int)
            sp.add_argument("--policy")
            sp.add_argument("--k", type=int, help="true hypothesis")
            sp.add_argument("--j", type=int, help="competing hypothesis (aep)")
            sp.add_argument("--length", type=int, help="trace length (aep)")
            sp.add_argument("--xi", type=float, help="xi estimate for scorer bounds")
            sp.add_argument("--threads", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    func, defaults, _ = COMMANDS[args.command]
    try:
        cfg = _resolve(args, defaults)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        files, code = func(cfg)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _write_manifest(out, args.command, cfg, files)
    return code


if __name__ == "__main__":
    sys.exit(main())
