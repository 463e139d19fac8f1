"""Interventional (do) Shapley values for structural causal models."""

__version__ = "0.1.0"

from .graph import (CausalGraph, CycleError, DuplicateLabel, GraphError, RejectionBudgetExceeded,  # noqa: E402
                    UnknownNode, build_graph, sample_random_graph)
from .fra import FrontierCache, irreducible_oracle, reduce_bits, reduce_set  # noqa: E402
from .scm import Scm, estimate_do_value, exact_do_value_discrete, noise_phi  # noqa: E402
from .dgps import builtin_dgp  # noqa: E402
from .values import Background, ConditionalValue, DoValue, MarginalValue  # noqa: E402
from .shapley import IdentifiabilityGate, IdentifiabilityError, ShapleyReport, approx_shapley, exact_shapley  # noqa: E402
from .coverage import budget_for_coverage, expected_coverage, expected_uncached_ratio  # noqa: E402
from .metrics import feature_importance, shap_loss  # noqa: E402

__all__ = [
    "CausalGraph", "CycleError", "DuplicateLabel", "GraphError", "RejectionBudgetExceeded", "UnknownNode",
    "build_graph", "sample_random_graph", "FrontierCache", "irreducible_oracle", "reduce_bits", "reduce_set",
    "Scm", "estimate_do_value", "exact_do_value_discrete", "noise_phi", "builtin_dgp", "Background",
    "ConditionalValue", "DoValue", "MarginalValue", "IdentifiabilityGate", "IdentifiabilityError",
    "ShapleyReport", "approx_shapley", "exact_shapley", "budget_for_coverage", "expected_coverage",
    "expected_uncached_ratio", "feature_importance", "shap_loss",
]
