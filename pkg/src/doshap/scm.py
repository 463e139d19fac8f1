"""Closed-form structural causal models.

An :class:`Scm` pairs a :class:`~doshap.graph.CausalGraph` with one
:class:`Mechanism` per node and a prior per latent confounder. Sampling draws
every latent, then every node's exogenous noise, then evaluates the mechanisms
in topological order. Noise is always drawn for every node, intervened or not,
so two runs with the same seed share their random numbers no matter which
nodes are held fixed.
"""

from __future__ import annotations

import csv
import itertools
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .graph import CausalGraph

LATENT_PREFIX = "latent:"


class InvalidIntervention(ValueError):
    pass


class UnsupportedContinuous(ValueError):
    pass


class NonAdditiveNoise(ValueError):
    pass


class ConfoundedTarget(ValueError):
    pass


def make_rng(seed, *keys: int) -> np.random.Generator:
    """Generator for the stream ``keys`` under the root ``seed``.

    Streams are split by ``SeedSequence`` spawn keys, so the stream for a given
    key tuple does not depend on how many other streams were used before it.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(keys))
    else:
        ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


# -- priors ----------------------------------------------------------------------


class Prior:
    mean: float
    support: tuple[tuple[float, float], ...] | None = None

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Normal(Prior):
    mu: float = 0.0
    sigma: float = 1.0

    @property
    def mean(self):
        return self.mu

    def sample(self, rng, n):
        return rng.normal(self.mu, self.sigma, n)


@dataclass(frozen=True)
class Beta(Prior):
    a: float
    b: float

    @property
    def mean(self):
        return self.a / (self.a + self.b)

    def sample(self, rng, n):
        return rng.beta(self.a, self.b, n)


@dataclass(frozen=True)
class ChiSquared(Prior):
    df: float

    @property
    def mean(self):
        return self.df

    def sample(self, rng, n):
        return rng.chisquare(self.df, n)


@dataclass(frozen=True)
class Exponential(Prior):
    rate: float = 1.0

    @property
    def mean(self):
        return 1.0 / self.rate

    def sample(self, rng, n):
        return rng.exponential(1.0 / self.rate, n)


@dataclass(frozen=True)
class Uniform(Prior):
    low: float = 0.0
    high: float = 1.0

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, n)


@dataclass(frozen=True)
class UniformInt(Prior):
    """Integers ``low..high`` inclusive, equally likely."""

    low: int
    high: int

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def support(self):
        k = self.high - self.low + 1
        return tuple((float(v), 1.0 / k) for v in range(self.low, self.high + 1))

    def sample(self, rng, n):
        return rng.integers(self.low, self.high, n, endpoint=True).astype(float)


@dataclass(frozen=True)
class Bernoulli(Prior):
    p: float

    @property
    def mean(self):
        return self.p

    @property
    def support(self):
        return ((0.0, 1.0 - self.p), (1.0, self.p))

    def sample(self, rng, n):
        return (rng.random(n) < self.p).astype(float)


@dataclass(frozen=True)
class Joint(Prior):
    """Several independent noise terms feeding one mechanism; samples have shape (n, d)."""

    parts: tuple[Prior, ...]

    @property
    def mean(self):
        return tuple(p.mean for p in self.parts)

    def sample(self, rng, n):
        return np.column_stack([p.sample(rng, n) for p in self.parts])


# -- mechanisms ------------------------------------------------------------------


PaFn = Callable[..., np.ndarray]


@dataclass(frozen=True)
class Mechanism:
    """Structural equation for one node.

    ``fn`` receives the parent values as an ``(n, len(parents))`` array (columns in
    ``parents`` order) and, depending on ``kind``:

    * ``additive``: ``value = fn(pa) + noise``
    * ``bernoulli``: ``fn(pa)`` is P(node = 1); the noise is a Uniform(0, 1) draw
    * ``deterministic``: ``value = fn(pa)``, no noise (a fitted-model stand-in)
    * ``function``: ``value = fn(pa, noise, conf)`` with ``conf`` the
      ``(n, len(confounders))`` latent values
    """

    kind: str
    parents: tuple[str, ...]
    fn: PaFn
    noise: Prior | None = None
    confounders: tuple[str, ...] = ()
    clip: bool = False

    def __post_init__(self):
        if self.kind not in ("additive", "bernoulli", "deterministic", "function"):
            raise ValueError(f"unknown mechanism kind {self.kind!r}")
        if self.kind == "deterministic" and self.noise is not None:
            raise ValueError("a deterministic mechanism takes no noise input")
        if self.kind == "bernoulli" and self.noise is None:
            object.__setattr__(self, "noise", Uniform(0.0, 1.0))
        if self.kind in ("additive", "function") and self.noise is None and not self.parents and not self.confounders:
            raise ValueError("an exogenous mechanism needs a noise prior")
        if self.confounders and self.kind != "function":
            raise ValueError("only 'function' mechanisms read latent confounders")

    def evaluate(self, pa: np.ndarray, noise, conf: np.ndarray | None) -> np.ndarray:
        if self.kind == "additive":
            return self.fn(pa) + noise
        if self.kind == "bernoulli":
            p = self.fn(pa)
            if self.clip:
                p = np.clip(p, 0.0, 1.0)
            return (noise < p).astype(float)
        if self.kind == "deterministic":
            return self.fn(pa)
        return self.fn(pa, noise, conf)

    def conditional_mean(self, pa: np.ndarray) -> np.ndarray:
        """E[node | parents] where it has a closed form."""
        if self.kind == "additive":
            return self.fn(pa) + self.noise.mean
        if self.kind == "bernoulli":
            p = self.fn(pa)
            return np.clip(p, 0.0, 1.0) if self.clip else p
        if self.kind == "deterministic":
            return self.fn(pa)
        raise NotImplementedError("no closed-form conditional mean for a generic mechanism")


def additive(parents: Sequence[str], fn: PaFn, noise: Prior) -> Mechanism:
    return Mechanism("additive", tuple(parents), fn, noise)


def bernoulli(parents: Sequence[str], prob: PaFn) -> Mechanism:
    return Mechanism("bernoulli", tuple(parents), prob)


def deterministic(parents: Sequence[str], fn: PaFn) -> Mechanism:
    return Mechanism("deterministic", tuple(parents), fn)


def exogenous(prior: Prior) -> Mechanism:
    return Mechanism("function", (), lambda pa, e, u: e, prior)


def function(parents: Sequence[str], fn: PaFn, noise: Prior | None = None, confounders: Sequence[str] = ()) -> Mechanism:
    return Mechanism("function", tuple(parents), fn, noise, tuple(confounders))


@dataclass(frozen=True)
class Latent:
    prior: Prior
    nodes: tuple[str, str]


# -- sample tables --------------------------------------------------------------


@dataclass
class SampleTable:
    """Joint samples over the measured nodes; ``values`` has one column per node."""

    labels: tuple[str, ...]
    values: np.ndarray
    latents: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return self.values.shape[0]

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.labels.index(label)]

    def to_csv(self, path) -> None:
        names = list(self.labels) + [LATENT_PREFIX + k for k in self.latents]
        cols = [self.values] + [v.reshape(len(self), -1)[:, :1] for v in self.latents.values()]
        data = np.column_stack(cols) if self.latents else self.values
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in data:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "SampleTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
        measured = [i for i, h in enumerate(header) if not h.startswith(LATENT_PREFIX)]
        latents = {h[len(LATENT_PREFIX):]: data[:, i] for i, h in enumerate(header) if h.startswith(LATENT_PREFIX)}
        return cls(tuple(header[i] for i in measured), data[:, measured], latents)


# -- the model ------------------------------------------------------------------


class Scm:
    """Structural causal model with closed-form mechanisms.

    ``latents`` maps a confounder name to its prior and the two nodes it joins;
    the set of joined pairs must equal the graph's bidirected edges, and each
    mechanism must read exactly the latents attached to its node.
    """

    def __init__(self, graph: CausalGraph, mechanisms: Mapping[str, Mechanism],
                 latents: Mapping[str, Latent] | None = None, name: str = "scm",
                 features: Sequence[str] | None = None):
        self.graph = graph
        self.name = name
        if features is None:
            self.features = graph.features
        else:
            self.features = tuple(sorted((graph.index(f) for f in features), key=graph.topo_order().index))
            if graph.target in self.features:
                raise ValueError("the target cannot be a feature")
        self.latents = dict(latents or {})
        missing = set(graph.labels) - set(mechanisms)
        extra = set(mechanisms) - set(graph.labels)
        if missing or extra:
            raise ValueError(f"mechanisms do not match graph nodes (missing {sorted(missing)}, extra {sorted(extra)})")

        pairs = {tuple(sorted(graph.index(v) for v in lat.nodes)) for lat in self.latents.values()}
        if pairs != set(graph.confounders):
            raise ValueError("latent confounders do not match the graph's bidirected edges")

        self.mechanisms: dict[int, Mechanism] = {}
        self._pa_idx: dict[int, np.ndarray] = {}
        for lab, mech in mechanisms.items():
            v = graph.index(lab)
            pa = [graph.index(p) for p in mech.parents]
            if set(pa) != set(graph.parents(v)) or len(pa) != len(set(pa)):
                raise ValueError(f"mechanism parents of {lab!r} do not match the graph edges")
            attached = {k for k, lat in self.latents.items() if lab in lat.nodes}
            if set(mech.confounders) != attached:
                raise ValueError(f"mechanism of {lab!r} must read exactly the latents {sorted(attached)}")
            self._pa_idx[v] = np.array(pa, dtype=int)
            self.mechanisms[v] = mech
        self._latent_names = list(self.latents)
        self._check_bernoulli_bounds()

    def _check_bernoulli_bounds(self):
        # enumerate all discrete parent configurations; unverifiable or violated
        # bounds switch clipping on for that node
        supports = self._supports()
        for v, mech in self.mechanisms.items():
            if mech.kind != "bernoulli":
                continue
            pa_sup = [supports.get(int(p)) for p in self._pa_idx[v]]
            if any(s is None for s in pa_sup):
                ok = False
            elif pa_sup:
                grid = np.array(list(itertools.product(*pa_sup)), dtype=float)
                p = np.asarray(mech.fn(grid), dtype=float)
                ok = bool(np.all((p >= 0) & (p <= 1)))
            else:
                p = float(np.asarray(mech.fn(np.zeros((1, 0)))).ravel()[0])
                ok = 0 <= p <= 1
            if not ok:
                object.__setattr__(mech, "clip", True)

    def _supports(self) -> dict[int, tuple[float, ...] | None]:
        out: dict[int, tuple[float, ...] | None] = {}
        for v in self.graph.topo_order():
            mech = self.mechanisms[v]
            if mech.kind == "bernoulli":
                out[v] = (0.0, 1.0)
            elif mech.kind == "function" and not mech.parents and not mech.confounders and mech.noise.support:
                out[v] = tuple(val for val, _ in mech.noise.support)
            else:
                out[v] = None
        return out

    @property
    def labels(self):
        return self.graph.labels

    @property
    def target(self) -> int:
        return self.graph.target

    @property
    def target_parents(self) -> np.ndarray:
        """Parent ids of the target in the order its mechanism reads them."""
        return self._pa_idx[self.graph.target]

    def target_mean(self, pa: np.ndarray) -> np.ndarray:
        """Closed-form E[Y | pa_Y]; ``pa`` columns follow :attr:`target_parents`."""
        return self.mechanisms[self.graph.target].conditional_mean(np.atleast_2d(pa))

    def _intervention(self, assignments) -> dict[int, float]:
        out = {}
        for node, val in (assignments or {}).items():
            try:
                v = self.graph.index(node)
            except KeyError as exc:
                raise InvalidIntervention(str(exc)) from None
            if v == self.graph.target:
                raise InvalidIntervention("cannot intervene on the target")
            out[v] = float(val)
        return out

    def sample(self, n: int, seed=None, intervention=None, skip_target: bool = False,
               return_latents: bool = False) -> SampleTable:
        """Draw ``n`` joint samples, optionally from the intervened model."""
        if n < 1:
            raise ValueError("sample count must be at least 1")
        do = self._intervention(intervention)
        rng = make_rng(seed)
        g = self.graph
        lat = {k: self.latents[k].prior.sample(rng, n) for k in self._latent_names}
        order = g.topo_order()
        noise = {}
        for v in order:
            prior = self.mechanisms[v].noise
            if prior is not None:
                noise[v] = prior.sample(rng, n)
        values = np.empty((n, len(g)))
        for v in order:
            if skip_target and v == g.target:
                values[:, v] = np.nan
                continue
            if v in do:
                values[:, v] = do[v]
                continue
            mech = self.mechanisms[v]
            pa = values[:, self._pa_idx[v]]
            conf = np.column_stack([lat[k] for k in mech.confounders]) if mech.confounders else None
            values[:, v] = mech.evaluate(pa, noise.get(v), conf)
        return SampleTable(g.labels, values, lat if return_latents else {})

    # -- exact enumeration --------------------------------------------------

    def relevant_nodes(self, intervened) -> set[int]:
        """Ancestors of the target once every edge into ``intervened`` is cut."""
        cut = set(intervened)
        seen = {self.graph.target}
        stack = [self.graph.target]
        while stack:
            v = stack.pop()
            if v in cut:
                continue
            for p in self.graph.parents(v):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def enumerate_joint(self, intervention=None, only_relevant: bool = False,
                        skip_target: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """All joint configurations of the (intervened) model with their probabilities.

        Every latent and every noise term feeding an evaluated mechanism must have
        finite support; Bernoulli nodes are expanded over {0, 1} directly. With
        ``only_relevant`` the nodes that cannot reach the target in the intervened
        graph are left unevaluated (NaN), which marginalizes them out for free.
        """
        do = self._intervention(intervention)
        g = self.graph
        todo = self.relevant_nodes(do) if only_relevant else set(range(len(g)))
        if skip_target:
            todo.discard(g.target)
        rows = np.full((1, len(g)), np.nan)
        w = np.ones(1)
        lat: dict[str, np.ndarray] = {}

        def expand(prior, what):
            nonlocal rows, w, lat
            if prior.support is None:
                raise UnsupportedContinuous(f"{what} has a continuous distribution")
            vals = np.array([v for v, _ in prior.support])
            probs = np.array([q for _, q in prior.support])
            r = len(vals)
            rows = np.repeat(rows, r, axis=0)
            w = np.repeat(w, r) * np.tile(probs, len(w))
            lat = {k: np.repeat(c, r) for k, c in lat.items()}
            return np.tile(vals, len(rows) // r)

        for k in self._latent_names:
            if any(g.index(n) in todo for n in self.latents[k].nodes):
                lat[k] = expand(self.latents[k].prior, f"latent {k!r}")
        for v in g.topo_order():
            if v not in todo:
                continue
            if v in do:
                rows[:, v] = do[v]
                continue
            mech = self.mechanisms[v]
            what = f"noise of {g.labels[v]!r}"
            if mech.kind == "bernoulli":
                p = np.asarray(mech.fn(rows[:, self._pa_idx[v]]), dtype=float) * np.ones(len(rows))
                if mech.clip:
                    p = np.clip(p, 0.0, 1.0)
                rows = np.vstack([rows, rows])
                rows[: len(p), v], rows[len(p):, v] = 0.0, 1.0
                w = np.concatenate([w * (1 - p), w * p])
                lat = {k: np.concatenate([c, c]) for k, c in lat.items()}
            elif mech.kind == "deterministic":
                rows[:, v] = mech.fn(rows[:, self._pa_idx[v]])
            else:
                e = expand(mech.noise, what) if mech.noise is not None else None
                conf = np.column_stack([lat[k] for k in mech.confounders]) if mech.confounders else None
                rows[:, v] = mech.evaluate(rows[:, self._pa_idx[v]], e, conf)
            keep = w > 0
            if not keep.all():
                rows, w = rows[keep], w[keep]
                lat = {k: c[keep] for k, c in lat.items()}
        return rows, w


def estimate_do_value(m: Scm, coalition_values=None, mc_samples: int = 1000, seed=None, target_fn=None):
    """Monte-Carlo E[Y | do(assignments)] and its standard error.

    ``target_fn`` maps the target's parent values to a prediction; without one the
    target's own mechanism is sampled.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be at least 1")
    table = m.sample(mc_samples, seed, coalition_values, skip_target=target_fn is not None)
    if target_fn is None:
        out = table.values[:, m.target]
    else:
        out = np.asarray(target_fn(table.values[:, m.target_parents]), dtype=float)
    se = float(out.std(ddof=1) / np.sqrt(len(out))) if len(out) > 1 else float("nan")
    return float(out.mean()), se


def exact_do_value_discrete(m: Scm, coalition_values=None, target_fn=None) -> float:
    """E[Y | do(assignments)] by exhaustive enumeration of a finite-support model."""
    rows, w = m.enumerate_joint(coalition_values, only_relevant=True, skip_target=target_fn is not None)
    if target_fn is None:
        out = rows[:, m.target]
    else:
        out = np.asarray(target_fn(rows[:, m.target_parents]), dtype=float)
    return float(np.dot(w, out) / w.sum())


def noise_phi(m: Scm, x, y: float, cond_mean_fn=None) -> float:
    """Attribution of the target's own noise term: ``y - E[Y | pa_Y]``.

    Valid only for an unconfounded target whose mechanism is additive in its noise.
    ``x`` is a full row over the graph's nodes or a mapping from node to value.
    """
    g = m.graph
    mech = m.mechanisms[g.target]
    if mech.kind != "additive":
        raise NonAdditiveNoise(f"target mechanism is {mech.kind!r}, not additive noise")
    if g.confounded_with(g.target):
        raise ConfoundedTarget("the target shares a latent confounder")
    if isinstance(x, Mapping):
        pa = np.array([[float(x[g.labels[p]] if g.labels[p] in x else x[p]) for p in m.target_parents]])
    else:
        pa = np.asarray(x, dtype=float)[m.target_parents].reshape(1, -1)
    fn = cond_mean_fn if cond_mean_fn is not None else m.target_mean
    return float(y - np.asarray(fn(pa), dtype=float).ravel()[0])
