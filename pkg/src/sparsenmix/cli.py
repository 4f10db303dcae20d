"""Command-line entry point.

Subcommands::

    sparsenmix generate  --config FILE --out DIR [--seed N]
    sparsenmix fit DATASET --method proposed|pnmf|nmixture [--config FILE] --out DIR
    sparsenmix benchmark --config FILE --trials N --seed N --out DIR
    sparsenmix ablate {M,p0,rho0,lambda} --config FILE --trials N --seed N --out DIR

Config files are flat ``key = value`` text; keys are the field names of
:class:`~sparsenmix.types.SolverConfig` and
:class:`~sparsenmix.datagen.GeneratorParams` (plus a few harness options),
per-block values may be given as ``lam_UU`` etc., and unknown keys are
rejected. ``--out`` falls back to the ``SPARSENMIX_OUT`` environment
variable. Failures exit with status 1 and a JSON error object on stderr.
"""

import argparse
import ast
import csv
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import io
from .admm import fit, write_trace_csv
from .baselines import nmixture_fit, poisson_nmf
from .datagen import GeneratorParams, generate
from .metrics import alpha_mse, auprc, auroc, graph_errors, perm_mse, rrmse
from .types import BLOCKS, SolverConfig

OUT_ENV = "SPARSENMIX_OUT"
METHODS = ("proposed", "pnmf", "nmixture")
CURVE_METRICS = ("perm_U", "perm_V", "alpha", "graph_UU", "graph_VV", "graph_UV")
FINAL_METRICS = CURVE_METRICS + ("rrmse", "auroc", "auprc")
HARNESS_DEFAULTS = {"pnmf_iters": 2000, "workers": 0}
ABLATION_GRIDS = {
    "M": (1, 5, 10),
    "p0": (0.3, 0.5, 0.7),
    "rho0": (1e-4, 1e-3, 1e-2, 1e-1),
    "lambda": (1e-4, 1e-3, 1e-2, 1e-1),
}

_SOLVER_FIELDS = {f.name for f in dataclasses.fields(SolverConfig)}
_GEN_FIELDS = {f.name for f in dataclasses.fields(GeneratorParams)}
_PER_BLOCK = ("lam", "rho0", "eps0")
_BLOCK_KEYS = {f"{name}_{X}" for name in _PER_BLOCK for X in BLOCKS}
SOLVER_KEYS = _SOLVER_FIELDS | _BLOCK_KEYS
GEN_KEYS = _GEN_FIELDS


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------- config


def _parse_value(text):
    text = text.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def read_config(path, allowed):
    """Parse a flat ``key = value`` file, rejecting keys outside ``allowed``."""
    if path is None:
        return {}
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in allowed:
                raise ConfigError(f"{path}:{n}: unknown key {key!r}")
            if key in out:
                raise ConfigError(f"{path}:{n}: duplicate key {key!r}")
            out[key] = _parse_value(value)
    return out


def solver_config(options, **overrides):
    kw = {k: v for k, v in options.items() if k in _SOLVER_FIELDS}
    kw.update(overrides)
    for name in _PER_BLOCK:
        per = {X: options[f"{name}_{X}"] for X in BLOCKS if f"{name}_{X}" in options}
        if per:
            base = kw.get(name, getattr(SolverConfig(), name))
            if not isinstance(base, dict):
                base = {X: base for X in BLOCKS}
            kw[name] = {**base, **per}
    return SolverConfig(**kw)


def generator_params(options, **overrides):
    kw = {k: v for k, v in options.items() if k in _GEN_FIELDS}
    kw.update(overrides)
    params = GeneratorParams(**kw)
    params.validate()
    return params


def harness_options(options):
    return {k: options.get(k, v) for k, v in HARNESS_DEFAULTS.items()}


def _out_dir(args):
    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        raise ConfigError(f"no output directory: pass --out or set {OUT_ENV}")
    os.makedirs(out, exist_ok=True)
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([io.fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


# ------------------------------------------------------------- evaluation


def curve_metrics(U, V, alpha, truth):
    g = graph_errors(U, V, truth["U0"], truth["V0"])
    return {
        "perm_U": perm_mse(U, truth["U0"]),
        "perm_V": perm_mse(V, truth["V0"]),
        "alpha": alpha_mse(alpha, truth["alpha0"]) if alpha is not None else math.nan,
        "graph_UU": g["UU"],
        "graph_VV": g["VV"],
        "graph_UV": g["UV"],
    }


def final_metrics(U, V, alpha, p, data, truth):
    """Curve metrics plus count and link metrics on observed entries.

    The predicted count of a replicate is ``p * lambda`` for detection models
    and ``lambda / M`` for Poisson NMF (``p=None``), whose factors model the
    replicate sum.
    """
    out = curve_metrics(U, V, alpha, truth)
    lam = U @ V.T
    mean = lam * p.reshape(lam.shape) if p is not None else lam / data.M
    Y_hat = np.broadcast_to(mean[:, :, None], data.y.shape)
    observed = ~data.missing
    out["rrmse"] = rrmse(Y_hat, data.y, observed) if data.y[observed].any() else math.nan
    pairs = data.observed_pairs()
    labels = data.y_sum[pairs] > 0
    scores = lam[pairs]
    out["auroc"] = auroc(scores, labels) if 0 < labels.sum() < labels.size else math.nan
    out["auprc"] = auprc(scores, labels) if labels.any() else math.nan
    return out


def _pad(curve, length):
    """Extend an early-stopped curve by holding its last value."""
    if not curve:
        return [dict.fromkeys(CURVE_METRICS, math.nan)] * length
    return curve + [curve[-1]] * (length - len(curve))


def run_methods(data, Z, truth, config, pnmf_iters, methods=METHODS):
    """Fit each method once; return ``{method: (final_metrics, curve)}``.

    Curves have ``config.max_outer + 1`` points (the start and every outer
    iteration). Poisson NMF has no outer loop, so its curve samples the
    multiplicative sweeps at evenly spaced checkpoints.
    """
    n_pts = int(config.max_outer) + 1
    out = {}
    for method in methods:
        curve = []
        if method == "pnmf":
            marks = {round(k * pnmf_iters / (n_pts - 1)) for k in range(n_pts)}

            def cb(s, U, V, marks=marks, curve=curve):
                if s in marks:
                    curve.append(curve_metrics(U, V, None, truth))

            res = poisson_nmf(data.y_sum, config.F, iters=pnmf_iters, seed=config.seed, p0=config.p0, M=data.M, callback=cb)
            final = final_metrics(res.U, res.V, None, None, data, truth)
        else:
            def cb(k, U, V, det, curve=curve):
                curve.append(curve_metrics(U, V, det.alpha, truth))

            runner = fit if method == "proposed" else nmixture_fit
            res = runner(data, Z, config, callback=cb, kkt=False)
            final = final_metrics(res.U, res.V, res.alpha, res.detection.p, data, truth)
        out[method] = (final, _pad(curve, n_pts))
    return out


def trial_seeds(seed, trials):
    """Independent per-trial seeds spawned from one root seed."""
    children = np.random.SeedSequence(int(seed)).spawn(int(trials))
    return [int(c.generate_state(1)[0]) for c in children]


def _run_trial(job):
    trial, seed, gen_kw, solver_kw, pnmf_iters, methods = job
    params = GeneratorParams(**{**gen_kw, "seed": seed})
    data, Z, truth = generate(params)
    tdict = {"U0": truth.U0, "V0": truth.V0, "alpha0": truth.alpha0}
    config = SolverConfig(**{**solver_kw, "seed": seed})
    return trial, run_methods(data, Z, tdict, config, pnmf_iters, methods)


def run_trials(gen_params, config, trials, seed, pnmf_iters=2000, workers=0, methods=METHODS):
    """Run ``trials`` independent synthetic trials, in order of trial index."""
    seeds = trial_seeds(seed, trials)
    gen_kw = gen_params.to_dict()
    solver_kw = dataclasses.asdict(config)
    jobs = [(t, s, gen_kw, solver_kw, pnmf_iters, tuple(methods)) for t, s in enumerate(seeds)]
    workers = int(workers) or (os.cpu_count() or 1)
    workers = min(workers, len(jobs))
    if workers <= 1:
        results = [_run_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    results.sort(key=lambda r: r[0])
    return [r[1] for r in results]


def _mean(values):
    vals = [v for v in values if not math.isnan(v)]
    return (float(np.mean(vals)), float(np.std(vals)), len(vals)) if vals else (math.nan, math.nan, 0)


def summarize(results, methods):
    """Metric rows, a summary table and mean curves from per-trial results."""
    rows, summary, curves = [], [], []
    for t, res in enumerate(results):
        for method in methods:
            final = res[method][0]
            for metric in FINAL_METRICS:
                if not math.isnan(final[metric]):
                    rows.append((metric, method, t, final[metric]))
    for method in methods:
        n_pts = len(results[0][method][1])
        mean_curve = {
            metric: [_mean([r[method][1][k][metric] for r in results])[0] for k in range(n_pts)]
            for metric in CURVE_METRICS
        }
        for metric in FINAL_METRICS:
            m, s, n = _mean([r[method][0][metric] for r in results])
            if n == 0:
                continue
            over = float(np.mean(mean_curve[metric][1:])) if metric in mean_curve else math.nan
            summary.append((metric, method, m, s, over, n))
        for k in range(n_pts):
            for metric in CURVE_METRICS:
                if not math.isnan(mean_curve[metric][k]):
                    curves.append((k, method, metric, mean_curve[metric][k]))
    return rows, summary, curves


def write_benchmark(out, rows, summary, curves, meta, prefix=""):
    _write_csv(os.path.join(out, prefix + "metrics.csv"), ["metric", "method", "trial", "value"], rows)
    _write_csv(
        os.path.join(out, prefix + "summary.csv"),
        ["metric", "method", "mean_final", "std_final", "mean_over_iterations", "n"],
        summary,
    )
    _write_csv(os.path.join(out, prefix + "curves.csv"), ["iter", "method", "metric", "value"], curves)
    _write_json(
        os.path.join(out, prefix + "metrics.json"),
        {
            "meta": meta,
            "rows": [dict(zip(("metric", "method", "trial", "value"), r)) for r in rows],
            "summary": [
                dict(zip(("metric", "method", "mean_final", "std_final", "mean_over_iterations", "n"), s))
                for s in summary
            ],
        },
    )


# --------------------------------------------------------------- commands


def cmd_generate(args):
    options = read_config(args.config, GEN_KEYS)
    if args.seed is not None:
        options["seed"] = args.seed
    params = generator_params(options)
    out = _out_dir(args)
    data, Z, truth = generate(params)
    io.write_dataset(out, data, Z, truth)
    return {"out": out, "seed": params.seed, "I": data.I, "J": data.J, "M": data.M}


def cmd_fit(args):
    options = read_config(args.config, SOLVER_KEYS)
    if args.seed is not None:
        options["seed"] = args.seed
    if args.method not in METHODS:
        raise ConfigError(f"unknown method {args.method!r}; choose from {', '.join(METHODS)}")
    data, Z, _, manifest = io.read_dataset(args.dataset)
    config = solver_config(options)
    out = _out_dir(args)
    result = {"method": args.method, "dataset": os.path.abspath(args.dataset), "config": dataclasses.asdict(config)}
    if args.method == "pnmf":
        res = poisson_nmf(data.y_sum, config.F, iters=int(args.pnmf_iters), seed=config.seed, p0=config.p0, M=data.M)
        result.update(U=res.U, V=res.V, n_iter=int(args.pnmf_iters), kl_final=res.kl[-1])
        _write_csv(os.path.join(out, "trace.csv"), ["iter", "kl"], [(k, float(v)) for k, v in enumerate(res.kl)])
    else:
        runner = fit if args.method == "proposed" else nmixture_fit
        res = runner(data, Z, config)
        result.update(
            U=res.U, V=res.V, alpha=res.alpha, p=res.detection.p, n_iter=res.n_iter,
            converged=res.converged, reason=res.reason,
            penalty_events=[list(e) for e in res.penalty_increase_events()],
            rho=res.aux.rho,
        )
        write_trace_csv(res, os.path.join(out, "trace.csv"))
    _write_json(os.path.join(out, "result.json"), result)
    return {"out": out, "method": args.method}


def cmd_benchmark(args):
    options = read_config(args.config, SOLVER_KEYS | GEN_KEYS | set(HARNESS_DEFAULTS))
    if "seed" in options:
        raise ConfigError("benchmark seeds come from --seed, not the config file")
    gen = generator_params(options)
    config = solver_config(options)
    harness = harness_options(options)
    out = _out_dir(args)
    results = run_trials(gen, config, args.trials, args.seed, harness["pnmf_iters"], harness["workers"])
    rows, summary, curves = summarize(results, METHODS)
    meta = {"trials": args.trials, "seed": args.seed, "generator": gen.to_dict(),
            "solver": dataclasses.asdict(config), "pnmf_iters": harness["pnmf_iters"]}
    write_benchmark(out, rows, summary, curves, meta)
    return {"out": out, "trials": args.trials}


def ablation_settings(which, values=None):
    if which not in ABLATION_GRIDS:
        raise ConfigError(f"unknown ablation {which!r}; choose from {', '.join(ABLATION_GRIDS)}")
    return tuple(values) if values else ABLATION_GRIDS[which]


def ablation_case(which, value, gen, config):
    """Generator parameters and solver config for one sweep setting."""
    if which == "M":
        return dataclasses.replace(gen, M=int(value)), config
    if which == "p0":
        return gen, config.replace(p0=float(value))
    if which == "rho0":
        return gen, config.replace(rho0={X: float(value) for X in BLOCKS})
    return gen, config.replace(lam={X: float(value) for X in BLOCKS})


def run_ablation(which, gen, config, trials, seed, values=None, workers=0):
    """Proposed-method trials at each sweep setting; returns ``{setting: results}``."""
    out = {}
    for value in ablation_settings(which, values):
        g, c = ablation_case(which, value, gen, config)
        out[value] = run_trials(g, c, trials, seed, workers=workers, methods=("proposed",))
    return out


def cmd_ablate(args):
    options = read_config(args.config, SOLVER_KEYS | GEN_KEYS | set(HARNESS_DEFAULTS))
    if "seed" in options:
        raise ConfigError("ablation seeds come from --seed, not the config file")
    values = [float(v) for v in args.values.split(",")] if args.values else None
    gen = generator_params(options)
    config = solver_config(options)
    harness = harness_options(options)
    out = _out_dir(args)
    sweep = run_ablation(args.which, gen, config, args.trials, args.seed, values, harness["workers"])
    rows, summary, curves = [], [], []
    for value, results in sweep.items():
        r, s, c = summarize(results, ("proposed",))
        rows += [(args.which, value) + (x[0], x[2], x[3]) for x in r]
        summary += [(args.which, value) + (x[0], x[2], x[3], x[4], x[5]) for x in s]
        curves += [(args.which, value) + (x[0], x[2], x[3]) for x in c]
    _write_csv(os.path.join(out, "ablation.csv"), ["param", "setting", "metric", "trial", "value"], rows)
    _write_csv(
        os.path.join(out, "ablation_summary.csv"),
        ["param", "setting", "metric", "mean_final", "std_final", "mean_over_iterations", "n"],
        summary,
    )
    _write_csv(os.path.join(out, "ablation_curves.csv"), ["param", "setting", "iter", "metric", "value"], curves)
    return {"out": out, "which": args.which, "settings": list(sweep)}


def build_parser():
    parser = argparse.ArgumentParser(prog="sparsenmix", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit one method to a dataset directory")
    p.add_argument("dataset")
    p.add_argument("--method", default="proposed")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--pnmf-iters", type=int, default=HARNESS_DEFAULTS["pnmf_iters"])
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("benchmark", help="synthetic comparison of all methods")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("ablate", help="one-parameter sweeps of the proposed method")
    p.add_argument("which", choices=sorted(ABLATION_GRIDS))
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--values", help="comma-separated override of the default grid")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "trials", 1) < 1:
            raise ConfigError("--trials must be at least 1")
        info = args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(_jsonable(info), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
