"""Command-line entry point: ``doshap <verb> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, harness
from .coverage import budget_for_coverage, expected_coverage, expected_uncached_ratio
from .dgps import UnknownDgp, builtin_dgp, linear_from_graph
from .graph import GraphError, RejectionBudgetExceeded, build_graph
from .metrics import feature_importance, shap_loss
from .scm import InvalidIntervention, UnsupportedContinuous, make_rng
from .shapley import IdentifiabilityError, IdentifiabilityGate, TooManyFeatures, approx_shapley, exact_shapley
from .values import Background, DoValue, MarginalValue

log = logging.getLogger("doshap")

EXIT_OK, EXIT_CONFIG, EXIT_ENGINE = 0, 2, 3


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root random seed (default 0)")
    common.add_argument("--out", default="results", help="output directory (default ./results)")
    common.add_argument("--json", action="store_true", help="print the run summary as JSON on stdout")
    common.add_argument("--threads", type=int, default=1, help="worker threads for permutation sampling")
    common.add_argument("--replications", type=int, default=None,
                        help="replications per cell (default 30; bench-fra graphs per cell)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="doshap", description="Interventional Shapley values for causal models.")
    ap.add_argument("--version", action="version", version=f"doshap {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("explain", parents=[common], help="explain samples of a model")
    src = ex.add_mutually_exclusive_group(required=True)
    src.add_argument("--dgp", help="built-in model: salary, synthetic_markovian, synthetic_semimarkovian, linear_random:K:P")
    src.add_argument("--graph", help="graph JSON file; mechanisms are linear-Gaussian")
    ex.add_argument("--samples", type=int, default=10, help="explained samples drawn from the model")
    ex.add_argument("--exact", action="store_true", help="enumerate all coalitions (and use exact values when discrete)")
    ex.add_argument("--mc", type=int, default=1000, help="Monte-Carlo samples per value evaluation")
    ex.add_argument("--perms", default="auto:0.5", help="permutation count, or auto:COVERAGE")
    ex.add_argument("--fra", dest="fra", action="store_true", default=True, help="reduce coalitions (default)")
    ex.add_argument("--no-fra", dest="fra", action="store_false")
    ex.add_argument("--no-cache", action="store_true", help="disable the value cache (baseline)")
    ex.add_argument("--compare-marginal", action="store_true", help="also run marginal attributions and report the loss")
    ex.add_argument("--background", type=int, default=1000, help="background rows for marginal attributions")
    ex.add_argument("--assert-identifiable", action="store_true", help="vouch for identifiability of a confounded graph")
    ex.add_argument("--gate", default="markovian-trivial", choices=["markovian-trivial", "user-asserted", "halt-on-unknown"])
    ex.add_argument("--frontier-cache", help="load/save the frontier cache at this path")

    bf = sub.add_parser("bench-fra", parents=[common], help="coalition-reduction benchmarks")
    bf.add_argument("--experiments", default="ratio,latency,ablation")
    bf.add_argument("--k", default="4-12", help="feature counts for the ratio experiment, e.g. 4-12 or 8,10,12")
    bf.add_argument("--p", default="0.1,0.25,0.5")
    bf.add_argument("--latency-k", default="5,10,15")
    bf.add_argument("--ablation-k", default="8,10,12")
    bf.add_argument("--ablation-p", type=float, default=0.25)
    bf.add_argument("--mc", type=int, default=100)
    bf.add_argument("--coverage", type=float, default=0.5)
    bf.add_argument("--max-tries", type=int, default=10_000_000)

    cv = sub.add_parser("coverage", parents=[common], help="expected cache coverage of permutation sampling")
    cv.add_argument("--k", type=int, required=True)
    g = cv.add_mutually_exclusive_group()
    g.add_argument("--n", type=int, help="report the curves for n = 1..N (default 100)")
    g.add_argument("--target", type=float, help="smallest n reaching this expected coverage")

    sc = sub.add_parser("salary-compare", parents=[common], help="do vs marginal vs conditional on the salary model")
    sc.add_argument("--background", type=int, default=1000)
    sc.add_argument("--mc", type=int, default=1000)
    sc.add_argument("--exact-only", action="store_true")

    gg = sub.add_parser("graphgen", parents=[common], help="sample graphs from the random family")
    gg.add_argument("--k", type=int, required=True)
    gg.add_argument("--p", type=float, required=True)
    gg.add_argument("--count", type=int, default=30)
    gg.add_argument("--max-tries", type=int, default=10_000)
    return ap


# -- verbs ----------------------------------------------------------------------


def _parse_perms(text: str, k: int) -> int:
    if text.startswith("auto:"):
        try:
            return budget_for_coverage(float(text[5:]), k)
        except ValueError as exc:
            raise ConfigError(f"--perms {text}: {exc}") from None
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"--perms must be an integer or auto:COVERAGE, got {text!r}") from None
    if n < 1:
        raise ConfigError("--perms must be at least 1")
    return n


def _load_model(args):
    if args.dgp:
        return builtin_dgp(args.dgp, seed=make_rng(args.seed, harness.STREAM_GRAPHS)), True
    path = Path(args.graph)
    if not path.is_file():
        raise ConfigError(f"graph file not found: {path}")
    try:
        g = build_graph(path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed graph file ({exc})") from None
    return linear_from_graph(g.project_to_target(), name=path.stem), False


def _target_fn(scm):
    mech = scm.mechanisms[scm.target]
    return scm.target_mean if mech.kind in ("additive", "bernoulli", "deterministic") else None


def cmd_explain(args) -> dict:
    if args.samples < 1:
        raise ConfigError("--samples must be at least 1")
    scm, truth = _load_model(args)
    k = len(scm.features)
    gate = IdentifiabilityGate(args.gate, asserted=args.assert_identifiable)
    n_perms = None if args.exact else _parse_perms(args.perms, k)
    target_fn = _target_fn(scm)
    exact_nu = False
    if args.exact:
        try:
            scm.enumerate_joint(skip_target=True)
            exact_nu = True
        except UnsupportedContinuous:
            exact_nu = False
    xs = scm.sample(args.samples, make_rng(args.seed, harness.STREAM_SAMPLES)).values
    fc = None
    use_fra = args.fra and not args.no_cache
    if args.frontier_cache and Path(args.frontier_cache).is_file() and use_fra:
        from .fra import FrontierCache
        fc = FrontierCache.load(args.frontier_cache, scm.graph.project_to_target())
    elif use_fra:
        from .fra import FrontierCache
        fc = FrontierCache(scm.graph.project_to_target())

    background = None
    if args.compare_marginal:
        background = Background.sample(scm, args.background, make_rng(args.seed, harness.STREAM_BACKGROUND))

    reports, marg_reports = [], []
    for i, x in enumerate(xs):
        vf = DoValue(scm, x, args.mc, seed=(args.seed, harness.STREAM_MC), stream=i, exact=exact_nu,
                     target_fn=target_fn, ground_truth=truth)
        kw = dict(use_fra=use_fra, cache=not args.no_cache, gate=gate, frontier_cache=fc)
        if args.exact:
            r = exact_shapley(vf, **kw)
        else:
            r = approx_shapley(vf, n_perms, seed=(args.seed, harness.STREAM_PERMS, i), threads=args.threads, **kw)
        reports.append(r)
        if background is not None:
            mv = MarginalValue.for_scm(scm, x, background, predictor=target_fn)
            marg_reports.append(exact_shapley(mv) if args.exact or k <= 12 else
                                approx_shapley(mv, n_perms or 100, seed=(args.seed, harness.STREAM_PERMS, i)))
    if fc is not None and args.frontier_cache:
        fc.save(args.frontier_cache)

    out = Path(args.out)
    labels = reports[0].features
    rows = []
    for i, (x, r) in enumerate(zip(xs, reports)):
        row = {"sample": i, **{f"x_{lab}": float(x[scm.graph.index(lab)]) for lab in labels}}
        row.update({f"phi_{lab}": float(v) for lab, v in zip(labels, r.phi)})
        row.update({f"se_{lab}": float(v) for lab, v in zip(labels, r.stderr)})
        row.update(nu_evals=r.nu_evals, efficiency_residual=r.efficiency_residual)
        rows.append(row)
    harness.write_csv(out / "phi.csv", rows)
    fi, skipped = feature_importance(reports)
    summary = {
        **harness.header("explain", args.seed, dgp=args.dgp, graph=args.graph, samples=args.samples,
                         exact=args.exact, exact_values=exact_nu, mc=None if exact_nu else args.mc,
                         permutations=n_perms, fra=use_fra, cache=not args.no_cache, gate=args.gate,
                         ground_truth=truth),
        "features": list(labels),
        "feature_importance": dict(zip(labels, fi.tolist())),
        "fi_skipped_samples": skipped,
        "max_efficiency_residual": max(r.efficiency_residual for r in reports),
        "nu_evals_total": sum(r.nu_evals for r in reports),
    }
    if marg_reports:
        summary["marginal_feature_importance"] = dict(zip(labels, feature_importance(marg_reports)[0].tolist()))
        summary["shap_loss_do_vs_marginal"] = shap_loss([r.phi for r in reports], [r.phi for r in marg_reports])
    harness.write_json(out / "reports.json", {**harness.header("explain", args.seed),
                                              "reports": [r.to_dict() for r in reports]})
    harness.write_json(out / "summary.json", summary)
    return summary


def cmd_bench_fra(args) -> dict:
    graphs = args.replications or 30
    exps = [e.strip() for e in args.experiments.split(",") if e.strip()]
    unknown = set(exps) - {"ratio", "latency", "ablation"}
    if unknown:
        raise ConfigError(f"unknown experiments {sorted(unknown)}")
    out = Path(args.out)
    summary = harness.header("bench-fra", args.seed, graphs=graphs, experiments=exps, k=args.k, p=args.p,
                             latency_k=args.latency_k, ablation_k=args.ablation_k, ablation_p=args.ablation_p,
                             mc=args.mc, coverage=args.coverage)
    try:
        ks, ps = _int_list(args.k), _float_list(args.p)
        lat_k, abl_k = _int_list(args.latency_k), _int_list(args.ablation_k)
    except ValueError as exc:
        raise ConfigError(f"bad list argument: {exc}") from None
    if "ratio" in exps:
        rows = harness.bench_reduction(ks, ps, graphs, args.seed, args.max_tries)
        harness.write_csv(out / "reduction_ratio.csv", rows)
        summary["reduction_ratio"] = rows
    if "latency" in exps:
        rows = harness.bench_latency(lat_k, ps, graphs, args.seed, mc_samples=args.mc, max_tries=args.max_tries)
        harness.write_csv(out / "fra_latency.csv", rows)
        summary["fra_latency"] = rows
    if "ablation" in exps:
        rows = harness.bench_ablation(abl_k, args.ablation_p, graphs, args.seed, args.mc, args.coverage, args.max_tries)
        harness.write_csv(out / "ablation.csv", rows)
        summary["ablation"] = rows
    harness.write_json(out / "bench_fra.json", summary)
    return summary


def cmd_coverage(args) -> dict:
    if args.k < 1:
        raise ConfigError("--k must be at least 1")
    summary = harness.header("coverage", None, k=args.k, n=args.n, target=args.target)
    if args.target is not None:
        try:
            n = budget_for_coverage(args.target, args.k)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        summary.update(budget=n, coverage_at_budget=expected_coverage(n, args.k),
                       coverage_before=expected_coverage(n - 1, args.k) if n > 1 else None)
        print(f"k={args.k} target={args.target}: n={n} (coverage {summary['coverage_at_budget']:.6f})")
    else:
        nmax = args.n or 100
        if nmax < 1:
            raise ConfigError("--n must be at least 1")
        rows = [{"n": n, "uncached_ratio": expected_uncached_ratio(n, args.k),
                 "coverage": expected_coverage(n, args.k)} for n in range(1, nmax + 1)]
        harness.write_csv(Path(args.out) / f"coverage_k{args.k}.csv", rows)
        summary["rows"] = rows
        print("n,uncached_ratio,coverage")
        for r in rows[: min(len(rows), 20)]:
            print(f"{r['n']},{r['uncached_ratio']:.6f},{r['coverage']:.6f}")
    harness.write_json(Path(args.out) / f"coverage_k{args.k}.json", summary)
    return summary


def cmd_salary_compare(args) -> dict:
    reps = args.replications or 30
    res = harness.salary_compare(args.seed, reps, args.background, args.mc, sampled=not args.exact_only)
    out = Path(args.out)
    harness.write_csv(out / "salary_exact.csv", res["exact"])
    if res["sampled"]:
        harness.write_csv(out / "salary_sampled.csv", res["sampled"])
    harness.write_csv(out / "salary_table.csv", res["table"])
    summary = {**harness.header("salary-compare", args.seed, replications=reps, background=args.background,
                                mc=args.mc, exact_only=args.exact_only), **res}
    harness.write_json(out / "salary_compare.json", summary)
    return summary


def cmd_graphgen(args) -> dict:
    if args.k < 2 or not 0 < args.p < 1 or args.count < 1:
        raise ConfigError("graphgen needs k >= 2, 0 < p < 1 and count >= 1")
    manifest = harness.graphgen(args.k, args.p, args.count, args.seed, args.out, args.max_tries)
    failed = [e for e in manifest["graphs"] if "error" in e]
    for e in failed:
        log.warning("graph %d: %s", e["index"], e["error"])
    return manifest


COMMANDS = {
    "explain": cmd_explain,
    "bench-fra": cmd_bench_fra,
    "coverage": cmd_coverage,
    "salary-compare": cmd_salary_compare,
    "graphgen": cmd_graphgen,
}

CONFIG_ERRORS = (ConfigError, UnknownDgp, GraphError, FileNotFoundError, InvalidIntervention)
ENGINE_ERRORS = (IdentifiabilityError, TooManyFeatures, RejectionBudgetExceeded, UnsupportedContinuous,
                 ValueError, RuntimeError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except CONFIG_ERRORS as exc:
        print(f"doshap {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ENGINE_ERRORS as exc:
        print(f"doshap {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    if args.json:
        print(json.dumps(summary, default=harness._jsonable))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
