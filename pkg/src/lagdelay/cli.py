"""Command-line front end: design, simulate, estimate, benchmark, bias-predict,
basis-check.

All configs and reports are JSON, signals and histograms are CSV.  Every
output embeds a content hash of the fully resolved configuration so any
published number can be regenerated.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .analysis import BenchmarkConfig, markov_mse, predict_bias_tau, run_monte_carlo
from .basis import (
    DEFAULT_COND_THRESHOLD,
    BasisConfig,
    assoc_laguerre_sequence,
    build_phi,
    eval_basis_matrix,
)
from .design import DesignProblem, optimize_design, validate_constraints
from .errors import DegenerateBError, InfeasibleDesignError, LagDelayError
from .estimators import (
    ESTIMATORS,
    crlb,
    estimate_delay_freq_interp,
    estimate_delay_lag_spline,
    estimate_delay_ml,
    estimate_delay_proposed,
)
from .simulate import InputDesign, default_tau_max, load_dataset, make_dataset, save_dataset

log = logging.getLogger("lagdelay")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_NO_METHOD = 3


def config_hash(obj) -> str:
    """Short content hash of a canonicalized JSON-compatible object."""
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _sanitize(obj):
    """Make an object strictly JSON-serializable (no NaN, no numpy types)."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        return val if np.isfinite(val) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(_sanitize(payload), f, indent=2, allow_nan=False)
        f.write("\n")


def _load_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _parse_methods(raw: str) -> tuple:
    if raw.strip().lower() == "all":
        return ESTIMATORS
    methods = tuple(m.strip() for m in raw.split(",") if m.strip())
    for m in methods:
        if m not in ESTIMATORS:
            raise ValueError(f"unknown method {m!r}; choose from {ESTIMATORS} or 'all'")
    if not methods:
        raise ValueError("empty method list")
    return methods


def cmd_design(args) -> int:
    cfg = _load_json(args.config)
    delta = float(cfg["delta"])
    if "n_samples" in cfg:
        n_samples = int(cfg["n_samples"])
    else:
        n_samples = int(np.floor(float(cfg["horizon"]) / delta + 1e-9)) + 1
    grid_spec = cfg.get("p_grid", {})
    p_grid = np.geomspace(
        float(grid_spec.get("min", 1.0)),
        float(grid_spec.get("max", 200.0)),
        int(grid_spec.get("count", 40)),
    )
    problem = DesignProblem(
        delta=delta,
        n_samples=n_samples,
        i_order=int(cfg["i_order"]),
        energy_bound=float(cfg["energy_bound"]),
        tau_guess=float(cfg["tau_guess"]),
        noise_var=float(cfg["noise_var"]),
        k_model=int(cfg["k_model"]),
        p_grid=p_grid,
        u_grid_points=int(cfg.get("u_grid_points", 25)),
        refine=bool(cfg.get("refine", True)),
    )
    resolved = {
        "delta": problem.delta,
        "n_samples": problem.n_samples,
        "i_order": problem.i_order,
        "energy_bound": problem.energy_bound,
        "tau_guess": problem.tau_guess,
        "noise_var": problem.noise_var,
        "k_model": problem.k_model,
        "p_grid": problem.p_grid.tolist(),
        "u_grid_points": problem.u_grid_points,
        "refine": problem.refine,
    }
    design = optimize_design(problem)
    objective = markov_mse(
        design, problem.k_model, problem.noise_var, problem.tau_guess,
        n_samples=problem.n_samples,
    ).mse
    ok, violations = validate_constraints(design.u, design.energy_bound)
    payload = design.to_dict()
    payload["config_hash"] = config_hash(resolved)
    payload["objective"] = objective
    payload["constraints"] = {"ok": ok, "violations": violations}
    _write_json(args.out, payload)
    print(f"design written to {args.out}")
    print(f"  p = {design.p:.6g}, u = {np.round(design.u.coeffs, 6).tolist()}")
    print(f"  objective (Markov MSE at tau_guess) = {objective:.6e}")
    print(f"  constraints ok = {ok}" + (f", violations = {violations}" if violations else ""))
    return EXIT_OK


def cmd_simulate(args) -> int:
    design = InputDesign.from_dict(_load_json(args.design))
    resolved = {
        "design": design.to_dict(),
        "tau": args.tau,
        "noise_var": args.noise_var,
        "seed": args.seed,
        "n_samples": args.n_samples,
    }
    ds = make_dataset(design, args.tau, args.noise_var, args.seed, args.n_samples)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "dataset.csv"
    save_dataset(ds, csv_path, extra_meta={"config_hash": config_hash(resolved)})
    print(f"dataset written to {csv_path} ({ds.n_samples} samples, delta = {ds.delta:g})")
    return EXIT_OK


def cmd_estimate(args) -> int:
    design = InputDesign.from_dict(_load_json(args.design))
    ds = load_dataset(args.dataset)
    if abs(ds.delta - design.delta) > 1e-12 * design.delta:
        print(
            f"error: dataset sampling time {ds.delta:g} does not match design {design.delta:g}",
            file=sys.stderr,
        )
        return EXIT_ERROR
    methods = _parse_methods(args.methods)
    k_model = args.k_model if args.k_model is not None else max(len(design.u) - 1, 2)
    tau_max = args.tau_max if args.tau_max is not None else default_tau_max(design)
    resolved = {
        "design": design.to_dict(),
        "dataset": str(args.dataset),
        "methods": list(methods),
        "k_model": k_model,
        "m_markov": args.m_markov,
        "tau_max": tau_max,
    }
    estimates, errors = {}, {}
    for method in methods:
        try:
            if method == "proposed":
                est = estimate_delay_proposed(ds, design, k_model, args.m_markov)
            elif method == "ml":
                est = estimate_delay_ml(ds, design, tau_max)
            elif method == "lag_spline":
                est = estimate_delay_lag_spline(ds, design, k_model, args.m_markov)
            else:
                est = estimate_delay_freq_interp(ds, design)
            estimates[method] = est.to_dict()
        except LagDelayError as exc:
            errors[method] = f"{type(exc).__name__}: {exc}"
    crlb_payload = None
    if ds.noise_var > 0:
        tau_ref = ds.true_tau if ds.true_tau is not None else design.tau_guess
        try:
            rep = crlb(design, tau_ref, ds.noise_var, n_samples=ds.n_samples)
            crlb_payload = {"bound": rep.bound, "window": list(rep.window)}
        except LagDelayError as exc:
            errors["crlb"] = f"{type(exc).__name__}: {exc}"
    report = {
        "config_hash": config_hash(resolved),
        "true_tau": ds.true_tau,
        "estimates": estimates,
        "errors": errors,
        "crlb": crlb_payload,
    }
    _write_json(args.out, report)
    for method, est in estimates.items():
        print(f"{method:12s} tau_hat = {est['tau_hat']:.9e}")
    for method, msg in errors.items():
        print(f"{method:12s} FAILED: {msg}")
    if crlb_payload:
        print(f"{'crlb':12s} bound   = {crlb_payload['bound']:.3e}")
    print(f"report written to {args.out}")
    return EXIT_OK if estimates else EXIT_NO_METHOD


def cmd_benchmark(args) -> int:
    cfg = _load_json(args.config)
    if "design" in cfg:
        design = InputDesign.from_dict(cfg["design"])
    else:
        design = InputDesign.from_dict(_load_json(cfg["design_path"]))
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        print("error: benchmark seed is mandatory (config 'seed' or --seed)", file=sys.stderr)
        return EXIT_ERROR
    replicates = args.replicates if args.replicates is not None else int(cfg.get("replicates", 1000))
    methods = _parse_methods(args.methods) if args.methods else tuple(cfg.get("methods", ESTIMATORS))
    bench = BenchmarkConfig(
        design=design,
        true_tau=float(cfg["true_tau"]),
        noise_var=float(cfg["noise_var"]),
        k_model=int(cfg["k_model"]),
        m_markov=None if cfg.get("m_markov") is None else int(cfg["m_markov"]),
        tau_max=None if cfg.get("tau_max") is None else float(cfg["tau_max"]),
        n_samples=None if cfg.get("n_samples") is None else int(cfg["n_samples"]),
        hist_bins=int(cfg.get("hist_bins", 40)),
    )
    resolved = {"benchmark": bench.to_dict(), "methods": list(methods),
                "replicates": replicates, "seed": int(seed)}
    started = time.perf_counter()
    stats = run_monte_carlo(bench, methods=methods, replicates=replicates,
                            seed=int(seed), workers=args.workers)
    runtime = time.perf_counter() - started
    crlb_value = None
    if bench.noise_var > 0:
        crlb_value = crlb(
            design, bench.true_tau, bench.noise_var, n_samples=bench.resolved_n_samples()
        ).bound
    per_method = {
        m: {
            "bias": s.bias,
            "var": s.variance,
            "mse_raw": s.mse_raw,
            "mse_normalized": s.mse_normalized,
            "failures": s.failures,
            "n_used": s.n_used,
        }
        for m, s in stats.per_method.items()
    }
    histogram = {
        m: {"edges": h["edges"].tolist(), "counts": h["counts"].tolist()}
        for m, h in stats.histogram.items()
    }
    # wall-clock runtime is the single nondeterministic report field; the
    # rest is bit-identical for any worker count
    report = {
        "config": resolved,
        "config_hash": config_hash(resolved),
        "seed": int(seed),
        "replicates": replicates,
        "per_method": per_method,
        "histogram": histogram,
        "crlb": crlb_value,
        "runtime_s": runtime,
    }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "report.json", report)
    with open(out_dir / "histogram.csv", "w") as f:
        f.write("method,bin_left,bin_right,count\n")
        for m, h in stats.histogram.items():
            edges, counts = h["edges"], h["counts"]
            for i, count in enumerate(counts):
                f.write(f"{m},{edges[i]:.17g},{edges[i + 1]:.17g},{int(count)}\n")
    print(f"benchmark report written to {out_dir / 'report.json'} ({runtime:.1f} s)")
    for m, s in stats.per_method.items():
        print(
            f"  {m:12s} bias={s.bias:+.3e} var={s.variance:.3e} "
            f"mse_raw={s.mse_raw:.3e} failures={s.failures}"
        )
    if crlb_value is not None:
        print(f"  {'crlb':12s} bound={crlb_value:.3e}")
    worst_failure = max(s.failures / replicates for s in stats.per_method.values())
    return EXIT_NO_METHOD if worst_failure > 0.5 else EXIT_OK


def cmd_bias_predict(args) -> int:
    design = InputDesign.from_dict(_load_json(args.design))
    k_model = args.k_model if args.k_model is not None else max(len(design.u) - 1, 2)
    resolved = {
        "design": design.to_dict(),
        "tau_check": args.tau_check,
        "noise_var": args.noise_var,
        "k_model": k_model,
        "m_markov": args.m_markov,
        "mc_samples": args.mc_samples,
        "seed": args.seed,
    }
    pred = predict_bias_tau(
        design,
        args.noise_var,
        args.tau_check,
        k_model,
        m_markov=args.m_markov,
        mc_samples=args.mc_samples,
        seed=args.seed,
    )
    payload = {
        "predicted_bias": pred.predicted_bias,
        "mc_samples": pred.mc_samples,
        "eps1_mean": pred.eps1_mean,
        "eps2_mean": pred.eps2_mean,
        "seed": int(args.seed),
        "config_hash": config_hash(resolved),
        "tau_check": args.tau_check,
        "noise_var": args.noise_var,
    }
    _write_json(args.out, payload)
    print(f"predicted bias = {pred.predicted_bias:+.6e} (written to {args.out})")
    return EXIT_OK


def cmd_basis_check(args) -> int:
    """Run the basis-layer invariant suite and print cond(Phi)."""
    from fractions import Fraction
    import math

    cfg = BasisConfig(p=args.p, num_funcs=args.num_funcs)
    failures = 0

    def check(name, ok, detail=""):
        nonlocal failures
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
        if not ok:
            failures += 1

    # recurrence vs exact-arithmetic direct sum
    worst = 0.0
    for xi in np.linspace(0.0, 50.0, 11):
        seq = assoc_laguerre_sequence(float(xi), 31)
        x = Fraction(float(xi))
        for m in range(31):
            if m == 0:
                exact = 1.0
            else:
                exact = float(
                    sum(
                        Fraction(math.comb(m - 1, n - 1), math.factorial(n)) * (-x) ** n
                        for n in range(1, m + 1)
                    )
                )
            worst = max(worst, abs(seq[m] - exact) / max(abs(exact), 1e-30))
    check("polynomial recurrence vs direct sum", worst < 1e-8, f"worst rel {worst:.2e}")

    phi = build_phi(cfg, args.delta, args.n_samples, args.cond_threshold)
    t = np.arange(args.n_samples) * args.delta
    analytic = eval_basis_matrix(cfg, t)
    scale = np.sqrt(2 * cfg.p)
    dev = np.max(np.abs(phi.matrix - analytic) / np.maximum(np.abs(analytic), scale))
    check("sampled basis vs closed form", dev < 1e-9, f"max mixed-rel {dev:.2e}")

    check(
        "first row equals sqrt(2p)",
        bool(np.allclose(phi.matrix[0], scale, rtol=1e-12)),
    )
    gram_dev = np.abs(args.delta * phi.matrix.T @ phi.matrix - np.eye(cfg.num_funcs)).max()
    print(f"  [INFO] Gram deviation from identity: {gram_dev:.3e}")
    print(f"  [INFO] cond(Phi) = {phi.cond:.6e}" + (" (flagged)" if phi.ill_conditioned else ""))
    check("condition number below threshold", not phi.ill_conditioned)
    return EXIT_OK if failures == 0 else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lagdelay",
        description="Subsample time-delay estimation via continuous Laguerre spectra",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_design = sub.add_parser("design", help="solve the experiment-design problem")
    p_design.add_argument("--config", required=True, help="design problem JSON")
    p_design.add_argument("--out", required=True, help="output design JSON path")
    p_design.set_defaults(fn=cmd_design)

    p_sim = sub.add_parser("simulate", help="synthesize a noisy dataset")
    p_sim.add_argument("--design", required=True, help="input design JSON")
    p_sim.add_argument("--tau", type=float, required=True, help="true delay, seconds")
    p_sim.add_argument("--noise-var", type=float, default=0.0)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--n-samples", type=int, default=None)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(fn=cmd_simulate)

    p_est = sub.add_parser("estimate", help="estimate the delay from a dataset")
    p_est.add_argument("--dataset", required=True, help="dataset CSV (JSON sidecar next to it)")
    p_est.add_argument("--design", required=True)
    p_est.add_argument("--methods", default="all")
    p_est.add_argument("--k-model", type=int, default=None)
    p_est.add_argument("--m-markov", type=int, default=None)
    p_est.add_argument("--tau-max", type=float, default=None)
    p_est.add_argument("--out", required=True, help="report JSON path")
    p_est.set_defaults(fn=cmd_estimate)

    p_bench = sub.add_parser("benchmark", help="seeded Monte-Carlo comparison")
    p_bench.add_argument("--config", required=True, help="benchmark config JSON")
    p_bench.add_argument("--replicates", type=int, default=None)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--workers", type=int, default=1)
    p_bench.add_argument("--methods", default=None)
    p_bench.add_argument("--out", required=True, help="output directory")
    p_bench.set_defaults(fn=cmd_benchmark)

    p_bias = sub.add_parser("bias-predict", help="predict the delay estimator bias")
    p_bias.add_argument("--design", required=True)
    p_bias.add_argument("--tau-check", type=float, required=True)
    p_bias.add_argument("--noise-var", type=float, required=True)
    p_bias.add_argument("--mc-samples", type=int, default=100_000)
    p_bias.add_argument("--seed", type=int, default=0)
    p_bias.add_argument("--k-model", type=int, default=None)
    p_bias.add_argument("--m-markov", type=int, default=None)
    p_bias.add_argument("--out", required=True)
    p_bias.set_defaults(fn=cmd_bias_predict)

    p_check = sub.add_parser("basis-check", help="run basis invariants, print cond(Phi)")
    p_check.add_argument("--p", type=float, required=True)
    p_check.add_argument("--num-funcs", type=int, required=True)
    p_check.add_argument("--delta", type=float, required=True)
    p_check.add_argument("--n-samples", type=int, required=True)
    p_check.add_argument("--cond-threshold", type=float, default=DEFAULT_COND_THRESHOLD)
    p_check.set_defaults(fn=cmd_basis_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LAGDELAY_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
              file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (InfeasibleDesignError, DegenerateBError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (LagDelayError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
