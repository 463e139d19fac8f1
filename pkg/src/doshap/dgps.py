"""Built-in data-generating processes."""

from __future__ import annotations

import numpy as np

from .graph import CausalGraph, sample_random_graph
from .scm import (Bernoulli, Beta, ChiSquared, Exponential, Joint, Latent, Normal, Scm, additive,
                  bernoulli, exogenous, function)


class UnknownDgp(ValueError):
    pass


def salary() -> Scm:
    """Four-node Bernoulli chain: age A, education E, skill S, salary Y."""
    g = CausalGraph(["A", "E", "S", "Y"],
                    [("A", "E"), ("A", "S"), ("E", "S"), ("E", "Y"), ("S", "Y")], "Y")
    mechs = {
        "A": exogenous(Bernoulli(0.25)),
        "E": bernoulli(["A"], lambda pa: 0.5 * pa[:, 0] + 0.25),
        "S": bernoulli(["A", "E"], lambda pa: 0.25 * pa[:, 0] + 0.5 * pa[:, 1] + 0.1),
        "Y": bernoulli(["E", "S"], lambda pa: 0.5 * pa[:, 0] + 0.3 * pa[:, 1] + 0.1),
    }
    return Scm(g, mechs, name="salary")


SYNTHETIC_EDGES = [("Z", "X"), ("Z", "Y"), ("X", "Y"), ("X", "A"), ("A", "B"), ("B", "C"), ("C", "Y")]
SYNTHETIC_FEATURES = ("Z", "X", "A", "B", "C")


def _logit(z):
    return np.log(z / (1 - z))


def synthetic_target_mean(pa: np.ndarray) -> np.ndarray:
    """E[Y | Z, X, C] for the synthetic process (columns in Z, X, C order)."""
    z, x, c = pa[:, 0], pa[:, 1], pa[:, 2]
    return _logit(z) + (x / 10) ** 2 + c


def _synthetic_mechs(u_is_node: bool) -> dict:
    conf = () if u_is_node else ("U_XB",)
    x_pa = ["Z", "U"] if u_is_node else ["Z"]
    b_pa = ["A", "U"] if u_is_node else ["A"]

    def f_x(pa, e, uc):
        u = pa[:, 1] if u_is_node else uc[:, 0]
        return np.abs(pa[:, 0] * (u - 5) + e)

    def f_b(pa, e, uc):
        u = pa[:, 1] if u_is_node else uc[:, 0]
        return 5 * np.sin(pa[:, 0]) - u / 10 + e

    return {
        "Z": exogenous(Beta(2, 5)),
        "X": function(x_pa, f_x, Normal(0, 0.1), conf),
        # A's exogenous noise is the pair (eps_A1, eps_A2)
        "A": function(["X"], lambda pa, e, uc: np.abs(np.sqrt(pa[:, 0]) + e[:, 0] + e[:, 1]),
                      Joint((Exponential(1.0), Normal(0, 0.1)))),
        "B": function(b_pa, f_b, Normal(0, 1), conf),
        "C": additive(["B"], lambda pa: np.log1p(pa[:, 0] ** 2), Normal(0, 0.5)),
        "Y": additive(["Z", "X", "C"], synthetic_target_mean, Normal(0, 0.5)),
    }


def synthetic_markovian() -> Scm:
    """The synthetic process with its X-B confounder ``U`` measured.

    ``U`` is an observed root but not a feature, so attributions cover the same
    five features as the semi-Markovian variant.
    """
    g = CausalGraph(["U", "Z", "X", "A", "B", "C", "Y"], SYNTHETIC_EDGES + [("U", "X"), ("U", "B")], "Y")
    mechs = _synthetic_mechs(True)
    mechs["U"] = exogenous(ChiSquared(10))
    return Scm(g, mechs, name="synthetic_markovian", features=SYNTHETIC_FEATURES)


def synthetic_semimarkovian() -> Scm:
    """The synthetic process with ``U`` latent, giving the bidirected edge X <-> B."""
    g = CausalGraph(["Z", "X", "A", "B", "C", "Y"], SYNTHETIC_EDGES, "Y", confounders=[("X", "B")])
    lat = {"U_XB": Latent(ChiSquared(10), ("X", "B"))}
    return Scm(g, _synthetic_mechs(False), lat, name="synthetic_semimarkovian")


def _mean_parents(pa: np.ndarray) -> np.ndarray:
    if pa.shape[1] == 0:
        return np.zeros(pa.shape[0])
    return pa.mean(axis=1)


def linear_from_graph(g: CausalGraph, name: str = "linear") -> Scm:
    """Every node is the mean of its parents plus standard-normal noise (roots: pure noise).

    Each bidirected pair gets its own standard-normal latent, added to both endpoints.
    """
    latents = {f"U_{g.labels[a]}_{g.labels[b]}": Latent(Normal(0, 1), (g.labels[a], g.labels[b]))
               for a, b in sorted(g.confounders)}
    mechs = {}
    for v, lab in enumerate(g.labels):
        pa = [g.labels[p] for p in sorted(g.parents(v))]
        conf = tuple(k for k, lat in latents.items() if lab in lat.nodes)
        if conf:
            mechs[lab] = function(pa, lambda pa, e, u: _mean_parents(pa) + u.sum(axis=1) + e, Normal(0, 1), conf)
        else:
            mechs[lab] = additive(pa, _mean_parents, Normal(0, 1))
    return Scm(g, mechs, latents, name=name)


def linear_random(k: int, p: float, seed=None, max_tries: int = 10_000_000) -> Scm:
    g = sample_random_graph(k, p, seed, max_tries=max_tries)
    return linear_from_graph(g, name=f"linear_random:{k}:{p}")


BUILTIN = {
    "salary": salary,
    "synthetic_markovian": synthetic_markovian,
    "synthetic_semimarkovian": synthetic_semimarkovian,
}


def builtin_dgp(name: str, seed=None, **params) -> Scm:
    """Look up a built-in model by name.

    ``linear_random`` takes ``k`` and ``p``, either as keywords or in the name
    itself as ``linear_random:K:P``.
    """
    base, *rest = name.split(":")
    if base == "linear_random":
        try:
            k = int(rest[0]) if rest else int(params["k"])
            p = float(rest[1]) if len(rest) > 1 else float(params["p"])
        except (KeyError, IndexError, ValueError):
            raise UnknownDgp("linear_random needs k and p, e.g. linear_random:8:0.25") from None
        return linear_random(k, p, seed, max_tries=params.get("max_tries", 10_000_000))
    if base not in BUILTIN or rest:
        raise UnknownDgp(f"unknown data-generating process {name!r}; choose from {sorted(BUILTIN)} or linear_random:K:P")
    return BUILTIN[base]()
