import numpy as np
import pytest
from scipy import stats

from doshap.dgps import UnknownDgp, builtin_dgp, linear_from_graph, linear_random
from doshap.graph import CausalGraph
from doshap.scm import (Bernoulli, ConfoundedTarget, InvalidIntervention, Latent, NonAdditiveNoise, Normal,
                        SampleTable, Scm, UnsupportedContinuous, additive, bernoulli, deterministic,
                        estimate_do_value, exact_do_value_discrete, exogenous, function, noise_phi)

from oracles import sal_nu


@pytest.fixture(scope="module")
def salary():
    return builtin_dgp("salary")


def test_salary_graph(salary):
    g = salary.graph
    assert {(g.labels[u], g.labels[v]) for u, v in g.edges} == {("A", "S"), ("A", "E"), ("E", "S"), ("E", "Y"), ("S", "Y")}
    assert g.is_markovian


def test_synthetic_graphs():
    m = builtin_dgp("synthetic_semimarkovian")
    g = m.graph
    assert {(g.labels[u], g.labels[v]) for u, v in g.edges} == {
        ("Z", "X"), ("Z", "Y"), ("X", "Y"), ("X", "A"), ("A", "B"), ("B", "C"), ("C", "Y")}
    assert {(g.labels[a], g.labels[b]) for a, b in g.confounders} == {("X", "B")}
    mk = builtin_dgp("synthetic_markovian")
    assert mk.graph.is_markovian
    assert [mk.graph.labels[v] for v in mk.features] == ["Z", "X", "A", "B", "C"]
    assert [g.labels[v] for v in m.features] == ["Z", "X", "A", "B", "C"]


def test_unknown_dgp():
    with pytest.raises(UnknownDgp):
        builtin_dgp("nope")
    with pytest.raises(UnknownDgp):
        builtin_dgp("linear_random:5")


def test_linear_random_reproducible():
    a = builtin_dgp("linear_random:8:0.25", seed=3)
    b = builtin_dgp("linear_random", seed=3, k=8, p=0.25)
    assert a.graph == b.graph
    assert np.array_equal(a.sample(50, 1).values, b.sample(50, 1).values)


def test_salary_marginal_of_a(salary):
    n = 100_000
    a = salary.sample(n, 11).column("A")
    se = np.sqrt(0.25 * 0.75 / n)
    assert abs(a.mean() - 0.25) < 3 * se


def test_linear_variance_at_least_one():
    m = linear_random(8, 0.3, seed=4)
    v = m.sample(50_000, 2).values.var(axis=0)
    assert np.all(v > 0.97)


def test_sample_count_must_be_positive(salary):
    with pytest.raises(ValueError):
        salary.sample(0, 1)


def test_seeded_determinism(salary):
    assert np.array_equal(salary.sample(100, 5).values, salary.sample(100, 5).values)
    assert not np.array_equal(salary.sample(100, 5).values, salary.sample(100, 6).values)


def test_do_education_shifts_skill(salary):
    n = 200_000
    s = salary.sample(n, 8, {"E": 1}).column("S")
    se = np.sqrt(0.6625 * 0.3375 / n)
    assert abs(s.mean() - 0.6625) < 4 * se


def test_empty_intervention_is_observational(salary):
    assert np.array_equal(salary.sample(500, 9).values, salary.sample(500, 9, {}).values)


def test_invalid_interventions(salary):
    with pytest.raises(InvalidIntervention):
        salary.sample(10, 1, {"Y": 1})
    with pytest.raises(InvalidIntervention):
        salary.sample(10, 1, {"Q": 1})


def test_sink_intervention_leaves_others_unchanged():
    m = builtin_dgp("synthetic_markovian")
    obs = m.sample(4000, 1)
    # C is the last feature before Y; compare with an independent stream
    intv = m.sample(4000, 2, {"C": 3.0})
    others = [lab for lab in m.labels if lab not in ("C", "Y")]
    alpha = 0.01 / len(others)
    for lab in others:
        assert stats.ks_2samp(obs.column(lab), intv.column(lab)).pvalue > alpha


@pytest.mark.parametrize("name, node, value", [
    ("synthetic_markovian", "X", 1.0),
    ("synthetic_semimarkovian", "A", 2.0),
    ("salary", "E", 1.0),
])
def test_intervention_locality(name, node, value):
    m = builtin_dgp(name)
    g = m.graph
    nondesc = [v for v in range(len(g)) if v not in g.descendants(node)]
    obs = m.sample(4000, 21)
    intv = m.sample(4000, 22, {node: value})
    alpha = 0.01 / len(nondesc)
    for v in nondesc:
        a, b = obs.values[:, v], intv.values[:, v]
        if name == "salary":
            table = np.array([[np.sum(a == 0), np.sum(a == 1)], [np.sum(b == 0), np.sum(b == 1)]])
            p = stats.chi2_contingency(table)[1] if table.min() > 0 else 1.0
        else:
            p = stats.ks_2samp(a, b).pvalue
        assert p > alpha


# -- interventional expectations ----------------------------------------------------


def test_exact_salary_values(salary):
    assert exact_do_value_discrete(salary) == pytest.approx(0.3925, abs=1e-15)
    assert exact_do_value_discrete(salary, {"E": 1}) == pytest.approx(0.79875, abs=1e-15)
    for a in (0, 1):
        for e in (0, 1):
            for s in (0, 1):
                v = exact_do_value_discrete(salary, {"A": a, "E": e, "S": s})
                assert v == pytest.approx(0.5 * e + 0.3 * s + 0.1, abs=1e-15)


def test_exact_matches_rational_oracle(salary):
    import itertools
    for x in itertools.product((0, 1), repeat=3):
        for r in range(4):
            for c in itertools.combinations("AES", r):
                got = exact_do_value_discrete(salary, {k: x["AES".index(k)] for k in c})
                assert got == pytest.approx(float(sal_nu("do", x, c)), abs=1e-15)


def test_exact_rejects_continuous():
    with pytest.raises(UnsupportedContinuous):
        exact_do_value_discrete(builtin_dgp("synthetic_markovian"))


def test_mc_empty_coalition(salary):
    v, se = estimate_do_value(salary, None, 1_000_000, 3)
    assert abs(v - 0.3925) < 4 * se
    v, se = estimate_do_value(salary, {"E": 1}, 1_000_000, 4)
    assert abs(v - 0.79875) < 4 * se


@pytest.mark.parametrize("m", [1_000, 10_000, 100_000])
def test_mc_consistency(salary, m):
    exact = exact_do_value_discrete(salary, {"A": 1})
    v, se = estimate_do_value(salary, {"A": 1}, m, 17)
    assert abs(v - exact) < 4 * se


def test_standard_error_scaling(salary):
    ms = np.array([1_000, 10_000, 100_000])
    ses = np.array([estimate_do_value(salary, None, int(m), 5)[1] for m in ms])
    slope = np.polyfit(np.log(ms), np.log(ses), 1)[0]
    assert abs(slope + 0.5) <= 0.1


def test_fully_intervened_deterministic_target():
    m = linear_random(5, 0.4, seed=1)
    x = m.sample(1, 2).values[0]
    do = {m.labels[v]: x[v] for v in m.features}
    v, se = estimate_do_value(m, do, 500, 3, target_fn=m.target_mean)
    pa = x[m.target_parents].reshape(1, -1)
    assert v == pytest.approx(float(m.target_mean(pa)[0]), abs=1e-12)
    assert se == pytest.approx(0.0, abs=1e-12)


def test_mc_sample_count_positive(salary):
    with pytest.raises(ValueError):
        estimate_do_value(salary, None, 0, 1)


def test_do_propagates_invalid(salary):
    with pytest.raises(InvalidIntervention):
        estimate_do_value(salary, {"Y": 0}, 10, 1)


# -- noise attribution --------------------------------------------------------------


def test_noise_phi_zero_and_offset():
    m = linear_random(6, 0.4, seed=2)
    x = m.sample(1, 1).values[0]
    pa = x[m.target_parents]
    mean = float(np.mean(pa)) if len(pa) else 0.0
    assert noise_phi(m, x, mean) == pytest.approx(0.0, abs=1e-12)
    assert noise_phi(m, x, mean + 1.7) == pytest.approx(1.7, abs=1e-12)


def test_noise_phi_structural_checks(salary):
    with pytest.raises(NonAdditiveNoise):
        noise_phi(salary, [0, 0, 0, np.nan], 1.0)
    g = CausalGraph(["A", "Y"], [("A", "Y")], "Y", confounders=[("A", "Y")])
    m = linear_from_graph(g)
    with pytest.raises(NonAdditiveNoise):
        noise_phi(m, [0.0, 0.0], 1.0)
    mechs = {
        "A": function([], lambda pa, e, u: u[:, 0] + e, Normal(0, 1), ("U",)),
        "Y": additive(["A"], lambda pa: pa[:, 0], Normal(0, 1)),
    }
    # an additive target that shares a latent with A is still refused
    bad = Scm.__new__(Scm)
    bad.graph, bad.mechanisms = g, {0: mechs["A"], 1: mechs["Y"]}
    bad._pa_idx = {0: np.array([], dtype=int), 1: np.array([0])}
    with pytest.raises(ConfoundedTarget):
        noise_phi(bad, [0.0, 0.0], 1.0)


# -- construction checks ------------------------------------------------------------


def test_mechanism_parents_must_match_graph():
    g = CausalGraph(["A", "Y"], [("A", "Y")], "Y")
    with pytest.raises(ValueError):
        Scm(g, {"A": exogenous(Normal()), "Y": additive([], lambda pa: 0 * pa[:, :1].sum(1), Normal())})


def test_latents_must_match_confounders():
    g = CausalGraph(["A", "B", "Y"], [("A", "Y"), ("B", "Y")], "Y", confounders=[("A", "B")])
    mechs = {"A": exogenous(Normal()), "B": exogenous(Normal()), "Y": additive(["A", "B"], lambda pa: pa.sum(1), Normal())}
    with pytest.raises(ValueError):
        Scm(g, mechs)


def test_bernoulli_bounds_clip_only_when_needed(salary):
    assert not any(mech.clip for mech in salary.mechanisms.values())
    g = CausalGraph(["A", "Y"], [("A", "Y")], "Y")
    m = Scm(g, {"A": exogenous(Bernoulli(0.5)), "Y": bernoulli(["A"], lambda pa: 1.5 * pa[:, 0])})
    assert m.mechanisms[1].clip
    assert exact_do_value_discrete(m, {"A": 1}) == 1.0


def test_deterministic_target_has_no_noise():
    with pytest.raises(ValueError):
        from doshap.scm import Mechanism
        Mechanism("deterministic", ("A",), lambda pa: pa[:, 0], Normal())
    g = CausalGraph(["A", "Y"], [("A", "Y")], "Y")
    m = Scm(g, {"A": exogenous(Bernoulli(0.3)), "Y": deterministic(["A"], lambda pa: 2 * pa[:, 0])})
    assert exact_do_value_discrete(m) == pytest.approx(0.6)


def test_discrete_latent_enumeration():
    g = CausalGraph(["A", "Y"], [("A", "Y")], "Y", confounders=[("A", "Y")])
    lat = {"U": Latent(Bernoulli(0.5), ("A", "Y"))}
    mechs = {
        "A": function([], lambda pa, e, u: u[:, 0], None, ("U",)),
        "Y": function(["A"], lambda pa, e, u: pa[:, 0] + u[:, 0], None, ("U",)),
    }
    m = Scm(g, mechs, lat)
    assert exact_do_value_discrete(m) == pytest.approx(1.0)
    assert exact_do_value_discrete(m, {"A": 1}) == pytest.approx(1.5)


def test_sample_table_csv_round_trip(tmp_path):
    m = builtin_dgp("synthetic_semimarkovian")
    t = m.sample(20, 1, return_latents=True)
    assert "U_XB" in t.latents
    p = tmp_path / "s.csv"
    t.to_csv(p)
    header = p.read_text().splitlines()[0].split(",")
    assert header[-1] == "latent:U_XB"
    back = SampleTable.from_csv(p)
    assert back.labels == t.labels
    assert np.array_equal(back.values, t.values)
    assert np.array_equal(back.latents["U_XB"], t.latents["U_XB"])
