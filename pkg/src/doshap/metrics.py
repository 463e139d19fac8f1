"""Summary statistics over attribution matrices."""

from __future__ import annotations

import warnings

import numpy as np


class ShapeMismatch(ValueError):
    pass


class AllZeroAttribution(UserWarning):
    pass


def _matrix(reports) -> np.ndarray:
    rows = [r.phi if hasattr(r, "phi") else r for r in reports]
    return np.atleast_2d(np.asarray(rows, dtype=float))


def feature_importance(reports) -> tuple[np.ndarray, int]:
    """Mean normalized absolute attribution per feature.

    ``reports`` holds ShapleyReports or raw attribution vectors. Samples whose
    attributions are all zero cannot be normalized; they are skipped with an
    :class:`AllZeroAttribution` warning and counted in the second return value.
    """
    phi = np.abs(_matrix(reports))
    totals = phi.sum(axis=1)
    ok = totals > 0
    skipped = int((~ok).sum())
    if skipped:
        warnings.warn(f"{skipped} sample(s) with all-zero attributions skipped", AllZeroAttribution, stacklevel=2)
    if not ok.any():
        return np.full(phi.shape[1], np.nan), skipped
    return (phi[ok] / totals[ok, None]).mean(axis=0), skipped


def shap_loss(ground, est) -> float:
    """Mean squared difference between two attribution matrices (samples x features)."""
    a = np.asarray(ground, dtype=float)
    b = np.asarray(est, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"attribution shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def mean_and_band(x, sigmas: float = 2.0) -> tuple[float, float]:
    """Mean and ``sigmas`` sample standard deviations; the band is NaN for a single value."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), float("nan")
    return float(x.mean()), float(sigmas * x.std(ddof=1))
