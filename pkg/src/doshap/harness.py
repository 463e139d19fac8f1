"""Experiment drivers behind the command-line verbs.

Each driver returns plain rows (lists of dicts) so tests can inspect results
without going through files; the CLI writes them out as CSV and JSON.
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from .coverage import budget_for_coverage
from .dgps import linear_from_graph, salary
from .fra import FrontierCache, FraTables, reduce_bits, reduce_set
from .graph import CausalGraph, RejectionBudgetExceeded, bits_of, sample_random_graph
from .metrics import mean_and_band
from .scm import make_rng
from .shapley import approx_shapley, exact_shapley, sample_permutations
from .values import Background, ConditionalValue, DoValue, MarginalValue

SCHEMA_VERSION = 1

# stream ids under the root seed, one per experiment family
STREAM_GRAPHS = 11
STREAM_SAMPLES = 12
STREAM_MC = 13
STREAM_PERMS = 14
STREAM_BACKGROUND = 15


def header(command: str, seed, **config) -> dict:
    return {"schema_version": SCHEMA_VERSION, "engine_version": __version__, "command": command,
            "seed": seed, "config": config}


def write_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields: list[str] = []
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fields)
        w.writeheader()
        w.writerows(rows)


def write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def random_graphs(k: int, p: float, count: int, seed, max_tries: int = 10_000_000):
    """``count`` graphs from the random family, graph ``i`` drawn from stream ``(k, p, i)``.

    Yields ``(index, graph_or_None, attempts, error)``; an infeasible draw is
    reported instead of aborting the whole batch.
    """
    p_key = int(round(p * 1_000_000))
    for i in range(count):
        rng = make_rng(seed, STREAM_GRAPHS, k, p_key, i)
        try:
            g, tries = sample_random_graph(k, p, rng, max_tries=max_tries, return_attempts=True)
            yield i, g, tries, None
        except RejectionBudgetExceeded as exc:
            yield i, None, max_tries, str(exc)


# -- FRA benchmarks --------------------------------------------------------------


def irreducible_ratio(g: CausalGraph, cache: FrontierCache | None = None) -> float:
    """Distinct irreducible coalitions over all ``2**k`` feature coalitions."""
    tables = FraTables(g)
    cache = cache if cache is not None else FrontierCache(g)
    feats = g.features
    k = len(feats)
    gmask = [0] * (1 << k)
    seen = set()
    for local in range(1 << k):
        if local:
            low = local & -local
            gmask[local] = gmask[local ^ low] | (1 << feats[low.bit_length() - 1])
        seen.add(reduce_bits(gmask[local], cache, tables))
    return len(seen) / (1 << k)


def bench_reduction(ks, ps, graphs: int, seed, max_tries: int = 10_000_000) -> list[dict]:
    rows = []
    for p in ps:
        for k in ks:
            ratios, errors = [], []
            for _, g, _, err in random_graphs(k, p, graphs, seed, max_tries):
                if g is None:
                    errors.append(err)
                    continue
                ratios.append(irreducible_ratio(g))
            row = {"experiment": "reduction_ratio", "k": k, "p": p, "graphs": len(ratios)}
            row.update(_band("ratio", ratios))
            if errors:
                row["error"] = f"{len(errors)} graph(s) infeasible: {errors[0]}"
            rows.append(row)
    return rows


def bench_latency(ks, ps, graphs: int, seed, coalitions: int = 1000, mc_samples: int = 100,
                  max_tries: int = 10_000_000) -> list[dict]:
    """Per-call reduction latency for both implementations, next to one value evaluation."""
    rows = []
    for p in ps:
        for k in ks:
            t_set, t_bits, t_nu, errors = [], [], [], []
            for i, g, _, err in random_graphs(k, p, graphs, seed, max_tries):
                if g is None:
                    errors.append(err)
                    continue
                rng = make_rng(seed, STREAM_SAMPLES, k, i)
                masks = [int(sum(1 << f for f, on in zip(g.features, r) if on))
                         for r in rng.random((coalitions, k)) < 0.5]
                sets = [frozenset(bits_of(m)) for m in masks]
                tables = FraTables(g)
                reduce_set(frozenset(), FrontierCache(g), g)  # builds the set tables
                cache = FrontierCache(g)
                t = time.perf_counter()
                for s in sets:
                    reduce_set(s, cache, g)
                t_set.append((time.perf_counter() - t) / coalitions * 1e6)
                cache = FrontierCache(g)
                t = time.perf_counter()
                for m in masks:
                    reduce_bits(m, cache, tables)
                t_bits.append((time.perf_counter() - t) / coalitions * 1e6)
                scm = linear_from_graph(g)
                vf = DoValue(scm, scm.sample(1, rng).values[0], mc_samples, seed=rng.integers(2**32))
                reps = 50
                t = time.perf_counter()
                for m in masks[:reps]:
                    vf(m)
                t_nu.append((time.perf_counter() - t) / reps * 1e6)
            row = {"experiment": "fra_latency", "k": k, "p": p, "graphs": len(t_bits)}
            row.update(_band("set_us", t_set))
            row.update(_band("bits_us", t_bits))
            row.update(_band("nu_us", t_nu))
            if t_bits:
                row["bits_over_nu"] = float(np.mean(t_bits) / np.mean(t_nu))
            if errors:
                row["error"] = f"{len(errors)} graph(s) infeasible: {errors[0]}"
            rows.append(row)
    return rows


def ablation_graph(g: CausalGraph, seed, index: int = 0, mc_samples: int = 100, coverage: float = 0.5,
                   samples: int = 1, modes=("none", "plain", "fra")) -> dict[str, dict]:
    """Wall time and value-evaluation counts of one explanation workload per cache mode.

    All modes see the same explained samples, permutations and random streams.
    """
    scm = linear_from_graph(g)
    k = len(scm.features)
    n_perms = budget_for_coverage(coverage, k)
    rng = make_rng(seed, STREAM_SAMPLES, index)
    xs = scm.sample(samples, rng).values
    perms = [sample_permutations(k, n_perms, (seed if seed is not None else 0, index, j)) for j in range(samples)]
    out = {}
    for mode in modes:
        fc = FrontierCache(g) if mode == "fra" else None
        evals = 0
        t = time.perf_counter()
        for j, x in enumerate(xs):
            vf = DoValue(scm, x, mc_samples, seed=(seed, index), stream=j)
            r = approx_shapley(vf, n_perms, use_fra=mode == "fra", cache=mode != "none",
                               permutations=perms[j], frontier_cache=fc)
            evals += r.nu_evals
        out[mode] = {"seconds": time.perf_counter() - t, "nu_evals": evals, "permutations": n_perms}
    return out


def bench_ablation(ks, p: float, graphs: int, seed, mc_samples: int = 100, coverage: float = 0.5,
                   max_tries: int = 10_000_000) -> list[dict]:
    rows = []
    for k in ks:
        per_mode: dict[str, list] = {"none": [], "plain": [], "fra": []}
        counts: dict[str, list] = {"none": [], "plain": [], "fra": []}
        errors = []
        for i, g, _, err in random_graphs(k, p, graphs, seed, max_tries):
            if g is None:
                errors.append(err)
                continue
            res = ablation_graph(g, seed, i, mc_samples, coverage)
            for mode, r in res.items():
                per_mode[mode].append(r["seconds"])
                counts[mode].append(r["nu_evals"])
        row = {"experiment": "ablation", "k": k, "p": p, "graphs": len(per_mode["fra"]),
               "permutations": budget_for_coverage(coverage, k), "mc_samples": mc_samples}
        for mode, name in (("none", "baseline"), ("plain", "cache"), ("fra", "fra")):
            row.update(_band(f"{name}_s", per_mode[mode]))
            row[f"{name}_nu_evals"] = float(np.mean(counts[mode])) if counts[mode] else float("nan")
        if errors:
            row["error"] = f"{len(errors)} graph(s) infeasible: {errors[0]}"
        rows.append(row)
    return rows


def _band(name: str, xs) -> dict:
    if not xs:
        return {f"{name}_mean": float("nan"), f"{name}_2sd": float("nan")}
    m, b = mean_and_band(xs)
    return {f"{name}_mean": m, f"{name}_2sd": b}


# -- salary comparison ----------------------------------------------------------


SALARY_FEATURES = ("A", "E", "S")


def salary_configs() -> list[tuple[int, int, int]]:
    return list(itertools.product((0, 1), repeat=3))


def _salary_row(cfg) -> list[float]:
    return [float(v) for v in cfg] + [float("nan")]


def salary_exact_values():
    """Exact value of every coalition under every semantics, for every factual configuration.

    Returns ``{config: {method: {coalition_labels: value}}}`` with coalitions as
    tuples of labels in (A, E, S) order.
    """
    m = salary()
    pop = Background.population(m)
    subsets = [c for r in range(4) for c in itertools.combinations(SALARY_FEATURES, r)]
    out = {}
    for cfg in salary_configs():
        x = _salary_row(cfg)
        vfs = {
            "do": DoValue(m, x, exact=True, target_fn=m.target_mean),
            "marginal": MarginalValue.for_scm(m, x, pop),
            "conditional": ConditionalValue.for_scm(m, x, pop),
        }
        out[cfg] = {name: {s: vf(sum(1 << m.graph.index(v) for v in s))[0] for s in subsets}
                    for name, vf in vfs.items()}
    return out


def equality_table(values, tol: float = 1e-12) -> dict[str, dict[tuple, bool]]:
    """For each non-interventional method and coalition: equal to do in every configuration?"""
    cfgs = list(values)
    subsets = list(values[cfgs[0]]["do"])
    table = {}
    for method in ("marginal", "conditional"):
        table[method] = {s: all(abs(values[c][method][s] - values[c]["do"][s]) <= tol for c in cfgs)
                         for s in subsets}
    return table


def salary_compare(seed, replications: int = 30, background: int = 1000, mc_samples: int = 1000,
                   sampled: bool = True) -> dict:
    m = salary()
    pop = Background.population(m)
    exact_rows, sampled_rows = [], []
    exact_phi = {}
    for ci, cfg in enumerate(salary_configs()):
        x = _salary_row(cfg)
        vfs = {
            "do": DoValue(m, x, exact=True, target_fn=m.target_mean),
            "marginal": MarginalValue.for_scm(m, x, pop),
            "conditional": ConditionalValue.for_scm(m, x, pop),
        }
        for method, vf in vfs.items():
            r = exact_shapley(vf)
            exact_phi[(cfg, method)] = r.phi
            exact_rows.append({"a": cfg[0], "e": cfg[1], "s": cfg[2], "method": method,
                               **{f"phi_{f}": float(v) for f, v in zip(r.features, r.phi)},
                               "efficiency_residual": r.efficiency_residual})
        if not sampled:
            continue
        for method in ("do", "marginal", "conditional"):
            reps = []
            errors = 0
            for rep in range(replications):
                if method == "do":
                    vf = DoValue(m, x, mc_samples, seed=(seed, rep), stream=ci, target_fn=m.target_mean)
                else:
                    bg = Background.sample(m, background, make_rng(seed, STREAM_BACKGROUND, rep))
                    cls = MarginalValue if method == "marginal" else ConditionalValue
                    vf = cls.for_scm(m, x, bg)
                try:
                    reps.append(exact_shapley(vf).phi)
                except ValueError:
                    errors += 1
            reps_arr = np.array(reps) if reps else np.full((1, 3), np.nan)
            row = {"a": cfg[0], "e": cfg[1], "s": cfg[2], "method": method, "replications": len(reps),
                   "failed_replications": errors}
            for j, f in enumerate(SALARY_FEATURES):
                mean, band = mean_and_band(reps_arr[:, j])
                ex = float(exact_phi[(cfg, method)][j])
                row[f"phi_{f}_mean"] = mean
                row[f"phi_{f}_2sd"] = band
                row[f"phi_{f}_exact"] = ex
                row[f"phi_{f}_bracketed"] = bool(abs(mean - ex) <= band) if not np.isnan(band) else None
            sampled_rows.append(row)
    values = salary_exact_values()
    table = equality_table(values)
    table_rows = [{"method": meth, "coalition": "{" + ",".join(s) + "}", "equal_to_do": eq}
                  for meth, cells in table.items() for s, eq in cells.items()]
    return {"exact": exact_rows, "sampled": sampled_rows, "table": table_rows}


# -- graph generation -----------------------------------------------------------


def graphgen(k: int, p: float, count: int, seed, out_dir, max_tries: int = 10_000_000) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, g, tries, err in random_graphs(k, p, count, seed, max_tries):
        entry = {"index": i, "stream": [STREAM_GRAPHS, k, int(round(p * 1_000_000)), i], "attempts": tries}
        if g is None:
            entry["error"] = err
        else:
            name = f"graph_{i:04d}.json"
            g.save(out_dir / name)
            entry.update(file=name, content_hash=g.content_hash(),
                         parents_of_target=len(g.parents(g.target)), edges=len(g.edges))
        entries.append(entry)
    manifest = {**header("graphgen", seed, k=k, p=p, count=count, max_tries=max_tries), "graphs": entries}
    write_json(out_dir / "manifest.json", manifest)
    return manifest
