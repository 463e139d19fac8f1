"""Coalition value functions: interventional, marginal and conditional.

Each value function maps an encoded coalition (``sum(1 << node_id)`` over graph
node ids) to ``(value, stderr)``. The Shapley engine only sees this interface,
so the three semantics can be compared on equal footing.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .graph import CausalGraph, bits_of
from .scm import Scm, SampleTable, estimate_do_value, exact_do_value_discrete, make_rng

Predictor = Callable[[np.ndarray], np.ndarray]


class EmptyBackground(ValueError):
    pass


class NoMatchingBackground(ValueError):
    pass


class ContinuousConditioning(ValueError):
    pass


class ValueFunction:
    """Base interface.

    Subclasses set ``graph``, ``features`` (node ids that may enter a coalition),
    ``kind`` and ``mc_samples`` (0 for exact), and implement :meth:`evaluate`.
    """

    kind = "custom"
    mc_samples = 0
    ground_truth = False

    graph: CausalGraph
    features: tuple[int, ...]

    def evaluate(self, coalition: int) -> tuple[float, float]:
        raise NotImplementedError

    def __call__(self, coalition: int) -> tuple[float, float]:
        return self.evaluate(coalition)


class DoValue(ValueFunction):
    """E[Y | do(S = x_S)] on a structural model.

    With ``exact=True`` the value is computed by enumeration (finite-support models
    only). Otherwise it is a Monte-Carlo mean over ``mc_samples`` draws. All
    coalitions of one explanation share one random stream (derived from ``seed``
    and ``stream``), so coalitions with equal interventional distributions on the
    target's ancestors produce equal estimates.

    ``target_fn`` replaces the sampled target by a predictor over the target's
    parents (columns in :attr:`Scm.target_parents` order). ``ground_truth`` marks
    runs against the true model, which need no identifiability check.
    """

    kind = "do"

    def __init__(self, scm: Scm, x, mc_samples: int = 1000, seed=0, exact: bool = False,
                 target_fn: Predictor | None = None, ground_truth: bool = True, stream: int = 0):
        self.scm = scm
        self.graph = scm.graph
        self.features = scm.features
        self.x = _as_row(x, scm.graph)
        self.exact = exact
        self.mc_samples = 0 if exact else int(mc_samples)
        if not exact and self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")
        self.seed = seed
        self.stream = stream
        self.target_fn = target_fn
        self.ground_truth = ground_truth

    def assignments(self, coalition: int) -> dict[int, float]:
        return {v: float(self.x[v]) for v in bits_of(coalition)}

    def evaluate(self, coalition: int) -> tuple[float, float]:
        do = self.assignments(coalition)
        if self.exact:
            return exact_do_value_discrete(self.scm, do, self.target_fn), 0.0
        rng = make_rng(self.seed, self.stream)
        return estimate_do_value(self.scm, do, self.mc_samples, rng, self.target_fn)


class Background:
    """Weighted reference rows over all graph nodes.

    Sampled backgrounds carry unit weights; the exact population of a discrete
    model carries its joint probabilities.
    """

    def __init__(self, values: np.ndarray, weights: np.ndarray | None = None, exact: bool = False):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[0] == 0:
            raise EmptyBackground("background table has no rows")
        self.values = values
        self.weights = np.ones(len(values)) if weights is None else np.asarray(weights, dtype=float)
        self.exact = exact

    def __len__(self):
        return len(self.values)

    @classmethod
    def sample(cls, scm: Scm, n: int, seed=None) -> "Background":
        return cls(scm.sample(n, seed).values)

    @classmethod
    def from_table(cls, table: SampleTable, graph: CausalGraph) -> "Background":
        cols = [table.labels.index(lab) for lab in graph.labels]
        return cls(table.values[:, cols])

    @classmethod
    def population(cls, scm: Scm) -> "Background":
        """Every configuration of a finite-support model with its probability."""
        rows, w = scm.enumerate_joint(skip_target=True)
        return cls(rows, w, exact=True)

    def weighted_mean(self, out: np.ndarray, w: np.ndarray) -> tuple[float, float]:
        total = w.sum()
        mean = float(np.dot(w, out) / total)
        if self.exact:
            return mean, 0.0
        n = int(np.count_nonzero(w))
        if n < 2:
            return mean, float("nan")
        var = float(np.dot(w, (out - mean) ** 2) / total)
        return mean, float(np.sqrt(var * n / (n - 1) / n))


class _BackgroundValue(ValueFunction):
    def __init__(self, graph: CausalGraph, predictor: Predictor, x, background: Background,
                 predictor_inputs=None, features=None):
        if background is None or len(background) == 0:
            raise EmptyBackground("background table has no rows")
        self.graph = graph
        self.features = tuple(features) if features is not None else graph.features
        self.predictor = predictor
        self.x = _as_row(x, graph)
        self.background = background
        # predictor reads these columns; defaults to the target's parents in id order
        if predictor_inputs is None:
            predictor_inputs = sorted(graph.parents(graph.target))
        self.inputs = np.array([graph.index(v) for v in predictor_inputs], dtype=int)

    def _predict(self, rows: np.ndarray) -> np.ndarray:
        return np.asarray(self.predictor(rows[:, self.inputs]), dtype=float) * np.ones(len(rows))

    @classmethod
    def for_scm(cls, scm: Scm, x, background: Background, predictor: Predictor | None = None, **kw):
        """Use the model's own E[Y | pa_Y] unless another predictor is supplied."""
        return cls(scm.graph, predictor or scm.target_mean, x, background,
                   predictor_inputs=scm.target_parents, features=scm.features, **kw)


class MarginalValue(_BackgroundValue):
    """Average of the predictor over background rows with ``S`` overwritten by ``x_S``."""

    kind = "marginal"

    def evaluate(self, coalition: int) -> tuple[float, float]:
        rows = self.background.values.copy()
        idx = bits_of(coalition)
        if idx:
            rows[:, idx] = self.x[idx]
        return self.background.weighted_mean(self._predict(rows), self.background.weights)


class ConditionalValue(_BackgroundValue):
    """Average of the predictor over background rows that agree with ``x`` on ``S``.

    Matching is exact, so every conditioned feature must be discrete. The match
    count of the latest evaluation of each coalition is kept in ``match_counts``.
    """

    kind = "conditional"

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.match_counts: dict[int, int] = {}
        vals = self.background.values
        with np.errstate(invalid="ignore"):
            self._discrete = {v for v in range(vals.shape[1]) if np.all(vals[:, v] == np.round(vals[:, v]))}

    def evaluate(self, coalition: int) -> tuple[float, float]:
        idx = bits_of(coalition)
        cont = [self.graph.labels[v] for v in idx if v not in self._discrete]
        if cont:
            raise ContinuousConditioning(f"cannot condition on continuous features {cont}")
        bg = self.background
        mask = np.all(bg.values[:, idx] == self.x[idx], axis=1) if idx else np.ones(len(bg), dtype=bool)
        w = np.where(mask, bg.weights, 0.0)
        self.match_counts[coalition] = int(np.count_nonzero(w))
        if not w.any():
            raise NoMatchingBackground(f"no background row matches the explained sample on {[self.graph.labels[v] for v in idx]}")
        return bg.weighted_mean(self._predict(bg.values), w)


def _as_row(x, graph: CausalGraph) -> np.ndarray:
    if isinstance(x, dict):
        row = np.full(len(graph), np.nan)
        for k, v in x.items():
            row[graph.index(k)] = float(v)
        return row
    row = np.asarray(x, dtype=float).ravel()
    if row.shape[0] != len(graph):
        raise ValueError(f"explained sample has {row.shape[0]} values, graph has {len(graph)} nodes")
    return row
