"""Exact and permutation-sampled Shapley values over any value function.

Every coalition lookup goes through three optional layers: reduction of the
coalition to its irreducible subset (``fra`` mode), a per-explanation value
cache (``plain`` and ``fra`` modes), and the identifiability gate. The
``none`` mode disables both caches and is the baseline for benchmarks.

Cached values are frozen on first computation. A coalition met again reuses
the stored estimate instead of drawing a fresh one, so the terms of the
Shapley sum are correlated through shared estimates.
"""

from __future__ import annotations

import math
import threading
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .fra import FraTables, FrontierCache, reduce_bits
from .graph import CausalGraph, bits_of
from .scm import make_rng

SCHEMA_VERSION = 1
MODES = ("none", "plain", "fra")


class IdentifiabilityError(RuntimeError):
    pass


class TooManyFeatures(ValueError):
    pass


# -- identifiability -------------------------------------------------------------


class IdentifiabilityGate:
    """Decides whether interventional queries may be answered.

    ``markovian-trivial`` passes everything on a graph without confounders and
    refuses a confounded graph up front unless ``asserted`` is set.
    ``user-asserted`` passes everything. ``halt-on-unknown`` asks ``oracle(coalition,
    graph)`` for each irreducible coalition (True, False or None for unknown) and
    stops at the first coalition that is not positively identifiable; without an
    oracle only Markovian graphs and the empty coalition pass.

    Value functions flagged ``ground_truth`` (sampling the true model) and
    non-interventional ones are never gated.
    """

    def __init__(self, mode: str = "markovian-trivial", asserted: bool = False,
                 oracle: Callable[[int, CausalGraph], bool | None] | None = None):
        if mode not in ("markovian-trivial", "user-asserted", "halt-on-unknown"):
            raise ValueError(f"unknown gate mode {mode!r}")
        self.mode = mode
        self.asserted = asserted
        self.oracle = oracle
        self.verdicts: dict[int, bool] = {}

    def applies(self, vf) -> bool:
        return getattr(vf, "kind", None) == "do" and not getattr(vf, "ground_truth", False)

    def start(self, vf, graph: CausalGraph) -> None:
        if not self.applies(vf):
            return
        if self.mode == "markovian-trivial" and not graph.is_markovian and not self.asserted:
            raise IdentifiabilityError(
                "graph has latent confounders; assert identifiability or use another gate mode")

    def check(self, vf, graph: CausalGraph, coalition: int) -> None:
        if self.mode != "halt-on-unknown" or not self.applies(vf):
            return
        ok = self.verdicts.get(coalition)
        if ok is None:
            if coalition == 0 or graph.is_markovian:
                ok = True
            elif self.oracle is not None:
                ok = self.oracle(coalition, graph) is True
            else:
                ok = False
            self.verdicts[coalition] = ok
        if not ok:
            names = [graph.labels[v] for v in bits_of(coalition)]
            raise IdentifiabilityError(f"do-query on {names} is not known to be identifiable")


# -- caches ----------------------------------------------------------------------


class ValueCache:
    """Coalition -> (value, stderr, mc_samples), computed at most once per key.

    Concurrent callers asking for the same missing key wait for the first one
    instead of computing it again.
    """

    def __init__(self):
        self.data: dict[int, tuple[float, float, int]] = {}
        self._lock = threading.Lock()
        self._pending: dict[int, threading.Event] = {}

    def __len__(self):
        return len(self.data)

    def __contains__(self, key):
        return key in self.data

    def get_or_compute(self, key: int, compute: Callable[[], tuple[float, float, int]]):
        entry = self.data.get(key)
        if entry is not None:
            return entry, True
        with self._lock:
            entry = self.data.get(key)
            if entry is not None:
                return entry, True
            event = self._pending.get(key)
            owner = event is None
            if owner:
                event = self._pending[key] = threading.Event()
        if not owner:
            event.wait()
            entry = self.data.get(key)
            if entry is not None:
                return entry, True
            return self.get_or_compute(key, compute)
        try:
            entry = compute()
            self.data[key] = entry
        finally:
            with self._lock:
                del self._pending[key]
            event.set()
        return entry, False


class _Reducer:
    """Coalition reduction on the target-ancestor projection of ``graph``."""

    def __init__(self, graph: CausalGraph, cache: FrontierCache | None):
        if graph.is_projected:
            self.proj = graph
            self.keep = None
        else:
            self.keep = bits_of(graph.ancestor_mask[graph.target])
            self.proj = graph.project(self.keep)
            self.new_id = {old: new for new, old in enumerate(self.keep)}
            self.anc = graph.ancestor_mask[graph.target]
        self.tables = _fra_tables(self.proj)
        self.cache = cache if cache is not None else FrontierCache(self.proj)
        self.cache.bind(self.proj)

    def __call__(self, s: int) -> int:
        if self.keep is None:
            return reduce_bits(s, self.cache, self.tables)
        # non-ancestors never change the value; drop them, reduce, map back
        local = 0
        for v in bits_of(s & self.anc):
            local |= 1 << self.new_id[v]
        out = 0
        for v in bits_of(reduce_bits(local, self.cache, self.tables)):
            out |= 1 << self.keep[v]
        return out


def _fra_tables(g: CausalGraph) -> FraTables:
    tabs = g.__dict__.get("_fra_bit_tables")
    if tabs is None:
        tabs = g.__dict__["_fra_bit_tables"] = FraTables(g)
    return tabs


@dataclass
class _Stats:
    nu_evals: int = 0
    cache_hits: int = 0
    lookups: int = 0
    fra_calls: int = 0
    fra_reductions: int = 0
    reduce_s: float = 0.0
    nu_s: float = 0.0

    def merge(self, other: "_Stats") -> None:
        for f in ("nu_evals", "cache_hits", "lookups", "fra_calls", "fra_reductions", "reduce_s", "nu_s"):
            setattr(self, f, getattr(self, f) + getattr(other, f))


class _Evaluator:
    def __init__(self, vf, graph: CausalGraph, mode: str, gate: IdentifiabilityGate,
                 frontier_cache: FrontierCache | None):
        if mode not in MODES:
            raise ValueError(f"cache mode must be one of {MODES}")
        self.vf = vf
        self.graph = graph
        self.mode = mode
        self.gate = gate
        self.values = ValueCache()
        self.reducer = _Reducer(graph, frontier_cache) if mode == "fra" else None
        # raw coalition -> irreducible coalition, so repeats skip the reduction
        self.reduced: dict[int, int] = {}
        self.m = int(getattr(vf, "mc_samples", 0))

    @property
    def frontier_cache(self) -> FrontierCache | None:
        return self.reducer.cache if self.reducer else None

    def _compute(self, key: int, st: _Stats):
        self.gate.check(self.vf, self.graph, key)
        t = time.perf_counter()
        value, se = self.vf(key)
        st.nu_s += time.perf_counter() - t
        st.nu_evals += 1
        return float(value), float(se), self.m

    def value(self, s: int, st: _Stats) -> float:
        st.lookups += 1
        if self.mode == "none":
            return self._compute(s, st)[0]
        key = s
        if self.reducer is not None:
            r = self.reduced.get(s)
            if r is None:
                t = time.perf_counter()
                r = self.reducer(s)
                st.reduce_s += time.perf_counter() - t
                st.fra_calls += 1
                st.fra_reductions += r != s
                self.reduced[s] = r
            key = r
        entry, hit = self.values.get_or_compute(key, lambda: self._compute(key, st))
        st.cache_hits += hit
        return entry[0]


# -- report ----------------------------------------------------------------------


@dataclass
class ShapleyReport:
    features: tuple[str, ...]
    phi: np.ndarray
    stderr: np.ndarray
    nu_evals: int
    cache_hits: int
    fra_reductions: int
    permutations: int | None
    timings_ms: dict[str, float]
    nu_empty: float
    nu_full: float
    mode: str
    exact: bool
    seed: object = None
    extra: dict = field(default_factory=dict)

    @property
    def efficiency_residual(self) -> float:
        return float(abs(math.fsum(self.phi) - (self.nu_full - self.nu_empty)))

    def __getitem__(self, label: str) -> float:
        return float(self.phi[self.features.index(label)])

    def to_dict(self) -> dict:
        def num(v):
            v = float(v)
            return None if math.isnan(v) else v

        return {
            "schema_version": SCHEMA_VERSION,
            "engine_version": __version__,
            "phi": {lab: {"value": num(p), "stderr": num(s)} for lab, p, s in zip(self.features, self.phi, self.stderr)},
            "nu_evals": self.nu_evals,
            "cache_hits": self.cache_hits,
            "fra_reductions": self.fra_reductions,
            "permutations": self.permutations,
            "timings_ms": self.timings_ms,
            "efficiency_residual": num(self.efficiency_residual),
            "nu_empty": num(self.nu_empty),
            "nu_full": num(self.nu_full),
            "mode": self.mode,
            "exact": self.exact,
            "seed": self.seed,
            **self.extra,
        }


def _setup(vf, graph, features, use_fra, cache, gate, frontier_cache):
    graph = graph if graph is not None else vf.graph
    feats = tuple(graph.index(f) for f in features) if features is not None else tuple(vf.features)
    if graph.target in feats:
        raise ValueError("the target cannot be a feature")
    mode = "fra" if use_fra else ("plain" if cache else "none")
    gate = gate or IdentifiabilityGate()
    gate.start(vf, graph)
    return graph, feats, _Evaluator(vf, graph, mode, gate, frontier_cache)


def _timings(st: _Stats, total: float, accumulate: float) -> dict[str, float]:
    return {"total": total * 1e3, "reduce": st.reduce_s * 1e3, "nu_eval": st.nu_s * 1e3,
            "accumulate": accumulate * 1e3}


# -- exact -----------------------------------------------------------------------


def shapley_weights(k: int) -> np.ndarray:
    """Weight of a size-``s`` coalition in the exact sum, ``1 / (k * C(k-1, s))``."""
    return np.array([1.0 / (k * math.comb(k - 1, s)) for s in range(k)])


def exact_shapley(vf, graph: CausalGraph | None = None, use_fra: bool = False, cache: bool = True,
                  features: Sequence | None = None, gate: IdentifiabilityGate | None = None,
                  frontier_cache: FrontierCache | None = None, max_features: int = 20) -> ShapleyReport:
    """Shapley values by full enumeration of all coalitions.

    With ``cache=False`` (and no FRA) every marginal contribution evaluates both of
    its coalitions, ``k * 2**k`` evaluations in all, which is the uncached baseline.
    """
    t0 = time.perf_counter()
    graph, feats, ev = _setup(vf, graph, features, use_fra, cache, gate, frontier_cache)
    k = len(feats)
    if k > max_features:
        raise TooManyFeatures(f"{k} features exceed the exact-mode cap of {max_features}")
    st = _Stats()
    n = 1 << k
    if k == 0:
        v0 = ev.value(0, st)
        return ShapleyReport((), np.zeros(0), np.zeros(0), st.nu_evals, st.cache_hits, st.fra_reductions,
                             None, _timings(st, time.perf_counter() - t0, 0.0), v0, v0, ev.mode, True)

    # graph-level mask of every local subset, built from the subset minus its lowest bit
    gmask = [0] * n
    for local in range(1, n):
        low = local & -local
        gmask[local] = gmask[local ^ low] | (1 << feats[low.bit_length() - 1])
    sizes = np.array([bin(i).count("1") for i in range(n)])
    w = shapley_weights(k)
    local = np.arange(n)
    phi = np.zeros(k)

    if ev.mode == "none":
        t_acc = 0.0
        for i in range(k):
            bit = 1 << i
            terms = []
            for s in range(n):
                if s & bit:
                    continue
                terms.append(w[sizes[s]] * (ev.value(gmask[s | bit], st) - ev.value(gmask[s], st)))
            ta = time.perf_counter()
            phi[i] = math.fsum(terms)
            t_acc += time.perf_counter() - ta
        v_empty = ev.value(0, st)
        v_full = ev.value(gmask[n - 1], st)
    else:
        vals = np.array([ev.value(gmask[s], st) for s in range(n)])
        ta = time.perf_counter()
        for i in range(k):
            bit = 1 << i
            without = local[(local & bit) == 0]
            phi[i] = math.fsum(w[sizes[without]] * (vals[without | bit] - vals[without]))
        t_acc = time.perf_counter() - ta
        v_empty, v_full = float(vals[0]), float(vals[n - 1])

    labels = tuple(graph.labels[v] for v in feats)
    return ShapleyReport(labels, phi, np.zeros(k), st.nu_evals, st.cache_hits, st.fra_reductions, None,
                         _timings(st, time.perf_counter() - t0, t_acc), v_empty, v_full, ev.mode, True,
                         extra={"distinct_coalitions": len(ev.values) if ev.mode != "none" else None,
                                "frontier_cache_size": len(ev.frontier_cache) if ev.frontier_cache else 0})


# -- permutation sampling -------------------------------------------------------


def sample_permutations(k: int, n: int, seed=0) -> np.ndarray:
    """``n`` uniform i.i.d. permutations of ``range(k)``, one per row."""
    rng = make_rng(seed, 1)
    return np.argsort(rng.random((n, k)), axis=1)


def approx_shapley(vf, n_perms: int, graph: CausalGraph | None = None, use_fra: bool = False,
                   seed=0, cache: bool = True, features: Sequence | None = None,
                   permutations: np.ndarray | None = None, threads: int = 1,
                   gate: IdentifiabilityGate | None = None,
                   frontier_cache: FrontierCache | None = None) -> ShapleyReport:
    """Permutation estimate of the Shapley values.

    Each permutation contributes the differences between consecutive prefix
    values, one per feature, so one pass over ``k + 1`` prefix coalitions updates
    every feature at once. Standard errors are over permutations. Results do not
    depend on ``threads``: each coalition's value is fixed by the value function
    and the cache, and the per-permutation rows are combined in order.
    """
    t0 = time.perf_counter()
    graph, feats, ev = _setup(vf, graph, features, use_fra, cache, gate, frontier_cache)
    k = len(feats)
    if permutations is None:
        if n_perms < 1:
            raise ValueError("n_perms must be at least 1")
        permutations = sample_permutations(k, n_perms, seed)
    permutations = np.asarray(permutations, dtype=int).reshape(-1, k)
    n = len(permutations)
    fbits = [1 << f for f in feats]
    diffs = np.zeros((n, k))

    def run(rows: range, st: _Stats):
        for r in rows:
            perm = permutations[r]
            mask = 0
            prev = ev.value(0, st)
            for j in perm:
                mask |= fbits[j]
                cur = ev.value(mask, st)
                diffs[r, j] = cur - prev
                prev = cur

    stats = _Stats()
    if threads <= 1 or n < 2:
        run(range(n), stats)
    else:
        chunks = [range(i, n, threads) for i in range(threads)]
        per = [_Stats() for _ in chunks]
        with ThreadPoolExecutor(threads) as pool:
            for fut in [pool.submit(run, c, s) for c, s in zip(chunks, per)]:
                fut.result()
        for s in per:
            stats.merge(s)

    ta = time.perf_counter()
    phi = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(k, np.nan)
    t_acc = time.perf_counter() - ta
    full = 0
    for b in fbits:
        full |= b
    aux = _Stats()
    v_empty, v_full = ev.value(0, aux), ev.value(full, aux)
    labels = tuple(graph.labels[v] for v in feats)
    return ShapleyReport(labels, phi, se, stats.nu_evals, stats.cache_hits, stats.fra_reductions, n,
                         _timings(stats, time.perf_counter() - t0, t_acc), v_empty, v_full, ev.mode, False,
                         seed=seed if isinstance(seed, (int, type(None))) else None,
                         extra={"distinct_coalitions": len(ev.values) if ev.mode != "none" else None,
                                "frontier_cache_size": len(ev.frontier_cache) if ev.frontier_cache else 0,
                                "fra_calls": stats.fra_calls, "lookups": stats.lookups})
