import itertools
import warnings

import numpy as np
import pytest

from doshap.dgps import builtin_dgp
from doshap.harness import equality_table, salary_exact_values
from doshap.scm import SampleTable
from doshap.values import (Background, ConditionalValue, ContinuousConditioning, DoValue, EmptyBackground,
                           MarginalValue, NoMatchingBackground)

from oracles import sal_nu

SUBSETS = [c for r in range(4) for c in itertools.combinations("AES", r)]
CONFIGS = list(itertools.product((0, 1), repeat=3))


@pytest.fixture(scope="module")
def salary():
    return builtin_dgp("salary")


@pytest.fixture(scope="module")
def exact_values():
    return salary_exact_values()


def mask(m, labels):
    return sum(1 << m.graph.index(v) for v in labels)


@pytest.mark.parametrize("method", ["do", "marginal", "conditional"])
def test_engine_values_match_rational_oracle(exact_values, method):
    for cfg in CONFIGS:
        for s in SUBSETS:
            assert exact_values[cfg][method][s] == pytest.approx(float(sal_nu(method, cfg, s)), abs=1e-14)


def test_rational_equalities_are_exact():
    # these cells coincide with the interventional value in exact arithmetic for every configuration
    for cfg in CONFIGS:
        assert sal_nu("marginal", cfg, ()) == sal_nu("do", cfg, ())
        assert sal_nu("marginal", cfg, ("A", "E", "S")) == sal_nu("do", cfg, ("A", "E", "S"))
        assert sal_nu("conditional", cfg, ("A",)) == sal_nu("do", cfg, ("A",))
        assert sal_nu("conditional", cfg, ("A", "E")) == sal_nu("do", cfg, ("A", "E"))
        assert sal_nu("conditional", cfg, ("A", "E", "S")) == sal_nu("do", cfg, ("A", "E", "S"))


def test_intervening_on_skill_does_not_move_other_features():
    # do(S) leaves A and E at their observational law and Y ignores A,
    # so the marginal and interventional values coincide on these coalitions
    for cfg in CONFIGS:
        assert sal_nu("marginal", cfg, ("S",)) == sal_nu("do", cfg, ("S",))
        assert sal_nu("marginal", cfg, ("E", "S")) == sal_nu("do", cfg, ("E", "S"))
        assert sal_nu("conditional", cfg, ("E", "S")) == sal_nu("do", cfg, ("E", "S"))


def test_strict_inequalities(exact_values):
    for method, s in [("marginal", ("A",)), ("marginal", ("E",)), ("marginal", ("A", "E")),
                      ("marginal", ("A", "S")), ("conditional", ("E",)), ("conditional", ("S",)),
                      ("conditional", ("A", "S"))]:
        gap = max(abs(sal_nu(method, c, s) - sal_nu("do", c, s)) for c in CONFIGS)
        assert gap > 1e-9
        assert max(abs(exact_values[c][method][s] - exact_values[c]["do"][s]) for c in CONFIGS) > 1e-9


def test_equality_table_agrees_with_oracle(exact_values):
    table = equality_table(exact_values)
    for method in ("marginal", "conditional"):
        for s in SUBSETS:
            want = all(sal_nu(method, c, s) == sal_nu("do", c, s) for c in CONFIGS)
            assert table[method][s] == want


def test_conditional_empty_equals_marginal_empty(salary):
    bg = Background.sample(salary, 500, 3)
    x = bg.values[0]
    assert ConditionalValue.for_scm(salary, x, bg)(0)[0] == MarginalValue.for_scm(salary, x, bg)(0)[0]


def test_constant_predictor_gives_constant_values(salary):
    bg = Background.sample(salary, 300, 4)
    x = bg.values[1]
    for cls in (MarginalValue, ConditionalValue):
        vf = cls.for_scm(salary, x, bg, predictor=lambda rows: np.full(len(rows), 2.5))
        for s in SUBSETS:
            assert vf(mask(salary, s))[0] == 2.5


def test_sampled_background_converges_to_population(salary):
    pop = Background.population(salary)
    assert pop.weights.sum() == pytest.approx(1.0)
    bg = Background.sample(salary, 100_000, 5)
    x = [1.0, 0.0, 1.0, np.nan]
    for cls in (MarginalValue, ConditionalValue):
        a, b = cls.for_scm(salary, x, pop), cls.for_scm(salary, x, bg)
        for s in SUBSETS:
            v, se = b(mask(salary, s))
            assert abs(v - a(mask(salary, s))[0]) < 5 * se + 1e-12


def test_exact_population_has_zero_stderr(salary):
    vf = MarginalValue.for_scm(salary, [1, 1, 1, np.nan], Background.population(salary))
    assert vf(mask(salary, "A"))[1] == 0.0


def test_background_errors(salary):
    with pytest.raises(EmptyBackground):
        Background(np.zeros((0, 4)))
    bg = Background(np.array([[0.0, 0.0, 0.0, 0.0]]))
    vf = ConditionalValue.for_scm(salary, [1, 1, 1, np.nan], bg)
    with pytest.raises(NoMatchingBackground):
        vf(mask(salary, "A"))
    assert vf.match_counts[mask(salary, "A")] == 0


def test_conditioning_on_continuous_feature_refused():
    m = builtin_dgp("synthetic_markovian")
    bg = Background.sample(m, 200, 1)
    vf = ConditionalValue.for_scm(m, bg.values[0], bg)
    assert np.isfinite(vf(0)[0])
    with pytest.raises(ContinuousConditioning):
        vf(1 << m.graph.index("X"))


def test_background_from_table_reorders_columns(salary):
    t = salary.sample(10, 1)
    cols = list(reversed(range(len(t.labels))))
    shuffled = SampleTable(tuple(t.labels[c] for c in cols), t.values[:, cols])
    assert np.array_equal(Background.from_table(shuffled, salary.graph).values, t.values)


def test_do_value_shares_stream_across_coalitions():
    m = builtin_dgp("synthetic_markovian")
    x = m.sample(1, 7).values[0]
    vf = DoValue(m, x, mc_samples=2000, seed=3)
    # C sits on every path from A and B to Y, so adding them to {C} changes nothing
    c = 1 << m.graph.index("C")
    ab = (1 << m.graph.index("A")) | (1 << m.graph.index("B"))
    assert vf(c) == vf(c | ab)
    assert vf(c) == DoValue(m, x, mc_samples=2000, seed=3)(c)
    assert vf(c) != DoValue(m, x, mc_samples=2000, seed=4)(c)


def test_do_value_rejects_bad_inputs(salary):
    with pytest.raises(ValueError):
        DoValue(salary, [0, 0, 0, 0], mc_samples=0)
    with pytest.raises(ValueError):
        DoValue(salary, [0, 0, 0])


def test_do_value_mc_matches_exact(salary):
    x = [1, 0, 1, np.nan]
    ex = DoValue(salary, x, exact=True)
    mc = DoValue(salary, x, mc_samples=200_000, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for s in SUBSETS:
            v, se = mc(mask(salary, s))
            assert abs(v - ex(mask(salary, s))[0]) < 4.5 * se + 1e-12
