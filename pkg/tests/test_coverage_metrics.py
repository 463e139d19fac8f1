import math
import warnings

import numpy as np
import pytest

from doshap.coverage import budget_for_coverage, expected_coverage, expected_uncached_ratio
from doshap.metrics import AllZeroAttribution, ShapeMismatch, feature_importance, mean_and_band, shap_loss

from oracles import comb_sum_coverage, simulate_coverage


def test_two_feature_values():
    # C(2,1) = 2: the second permutation repeats its middle coalition with probability 1/2
    assert expected_uncached_ratio(1, 2) == 1.0
    assert expected_uncached_ratio(2, 2) == pytest.approx(1 / 6)
    assert expected_coverage(1, 2) == pytest.approx(3 / 4)
    assert expected_coverage(2, 2) == pytest.approx(7 / 8)


@pytest.mark.parametrize("k", [1, 3, 6, 10, 20])
@pytest.mark.parametrize("n", [1, 2, 7, 50, 400])
def test_coverage_matches_exact_binomial_sum(k, n):
    assert expected_coverage(n, k) == pytest.approx(comb_sum_coverage(n, k), abs=1e-12)


def test_coverage_monotone_and_bounded():
    for k in (3, 8, 15):
        c = [expected_coverage(n, k) for n in range(1, 200)]
        assert all(0 < a <= b <= 1 for a, b in zip(c, c[1:]))
        u = [expected_uncached_ratio(n, k) for n in range(1, 200)]
        assert all(a >= b for a, b in zip(u, u[1:]))
        # only the empty and full coalitions are certain repeats
        assert u[-1] >= 0.0 and u[1] <= 1 - 2 / (k + 1) + 1e-12


def test_large_k_is_finite():
    assert expected_coverage(10, 60) == pytest.approx(comb_sum_coverage(10, 60), rel=1e-9)
    assert 0 < expected_coverage(10, 60) < 1e-10
    direct = sum((1 - 1 / math.comb(60, s)) ** 9 for s in range(61)) / 61
    assert expected_uncached_ratio(10, 60) == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("k, want", [(5, 5), (8, 31), (10, 111), (12, 407), (13, 781)])
def test_budget_examples(k, want):
    n = budget_for_coverage(0.5, k)
    assert n == want
    assert expected_coverage(n, k) >= 0.5 > (expected_coverage(n - 1, k) if n > 1 else 0)


def test_budget_errors():
    with pytest.raises(ValueError):
        budget_for_coverage(1.0, 5)
    with pytest.raises(ValueError):
        budget_for_coverage(0.5, 0)
    with pytest.raises(ValueError):
        expected_coverage(0, 3)


def test_simulation_agrees_small():
    cov, new = simulate_coverage(6, [1, 3, 10], 400, 1)
    for n in (1, 3, 10):
        assert abs(cov[n] - expected_coverage(n, 6)) < 0.02
        assert abs(new[n] - expected_uncached_ratio(n, 6)) < 0.03


# -- metrics -------------------------------------------------------------------------


def test_feature_importance_example():
    fi, skipped = feature_importance([[1.0, -1.0, 2.0], [0.0, 3.0, 1.0]])
    assert skipped == 0
    assert fi.tolist() == pytest.approx([0.125, 0.5, 0.375])
    assert fi.sum() == pytest.approx(1.0)


def test_feature_importance_skips_zero_rows():
    with pytest.warns(AllZeroAttribution):
        fi, skipped = feature_importance([[0.0, 0.0], [1.0, 3.0]])
    assert skipped == 1 and fi.tolist() == [0.25, 0.75]
    with pytest.warns(AllZeroAttribution):
        fi, skipped = feature_importance([[0.0, 0.0]])
    assert skipped == 1 and np.isnan(fi).all()


def test_feature_importance_no_warning_normally():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        feature_importance([[1.0, 2.0]])


def test_shap_loss():
    assert shap_loss([[1.0, 2.0], [3.0, 4.0]], [[1.0, 2.0], [3.0, 4.0]]) == 0.0
    assert shap_loss([[0.0, 0.0]], [[1.0, 3.0]]) == 5.0
    with pytest.raises(ShapeMismatch):
        shap_loss([[0.0, 0.0]], [[0.0, 0.0, 0.0]])


def test_mean_and_band():
    m, b = mean_and_band([1.0, 3.0])
    assert m == 2.0 and b == pytest.approx(2 * np.sqrt(2))
    m, b = mean_and_band([4.0])
    assert m == 4.0 and np.isnan(b)
