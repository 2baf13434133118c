import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nested_markov.cadmg import GraphError, intrinsic_structure, read_graph
from nested_markov.graphs import builtin
from nested_markov.kernel import Kernel, joint, marginal, reach_kernel, uniform
from nested_markov.param import (NestedModel, NestedParams, StateSpace, alternating_sum, covering_set,
                                 dimension, do_margin, do_probability, from_distribution, params_from_csv,
                                 params_to_csv, random_params, to_distribution)

from conftest import FIXTURE_NAMES, fixture_graph, positive_kernel_table


def binary_model(g, corner=None):
    return NestedModel(g, StateSpace.binary(g.random + g.fixed, corner))


@pytest.mark.parametrize("name, d", [("verma", 11), ("wls_a", 13), ("wls_b", 9), ("wls_full", 15),
                                     ("conditional", 15), ("chain_bow", 11), ("iv", 7),
                                     ("bidirected_pair", 3)])
def test_dimension(name, d):
    g = builtin(name)
    sp = StateSpace.binary(g.random + g.fixed)
    assert dimension(intrinsic_structure(g), sp) == d
    assert NestedModel(g, sp).n_params == d


def test_dimension_single_vertex_and_levels():
    g = read_graph("random a")
    assert dimension(intrinsic_structure(g), StateSpace({"a": 2})) == 1
    g = builtin("iv")
    # heads {Z}, {X} | Z and {Y} | Z,X on levels 3, 2, 4
    sp = StateSpace({"Z": 3, "X": 2, "Y": 4})
    assert dimension(intrinsic_structure(g), sp) == 2 + 1 * 3 + 3 * (3 * 2)


def test_state_space_validation():
    with pytest.raises(ValueError):
        StateSpace({"a": 1})
    with pytest.raises(ValueError):
        StateSpace({"a": 2}, {"a": 2})
    sp = StateSpace({"a": 3}, {"a": 0})
    assert sp.reduced("a") == [1, 2]
    assert StateSpace({"a": 3}).reduced("a") == [0, 1]


def test_single_vertex_map():
    m = binary_model(read_graph("random v"))
    assert np.allclose(to_distribution(NestedParams(m, [0.3])).table, [0.3, 0.7])


def test_bidirected_pair_expansion():
    m = binary_model(builtin("bidirected_pair"))
    qa, qb, qab = 0.6, 0.5, 0.35
    theta = np.zeros(3)
    theta[m.index(["a"], {"a": 0}, {})] = qa
    theta[m.index(["b"], {"b": 0}, {})] = qb
    theta[m.index(["a", "b"], {"a": 0, "b": 0}, {})] = qab
    p = to_distribution(NestedParams(m, theta)).array(("a", "b"))
    assert np.allclose(p, [[qab, qa - qab], [qb - qab, 1 - qa - qb + qab]], atol=1e-15)


def test_uniform_parameters_give_uniform(fixture):
    _, g = fixture
    m = binary_model(g)
    k = to_distribution(NestedParams(m, m.uniform_theta()))
    assert np.allclose(k.table, 1.0 / 2 ** len(g.random), atol=1e-14)


def test_uniform_distribution_gives_uniform_parameters(fixture):
    _, g = fixture
    m = binary_model(g)
    k = uniform({v: 2 for v in g.random + g.fixed}, g.random, g.fixed)
    p = from_distribution(g, m.structure, m.space, k, model=m)
    want = np.concatenate([np.full(b.size, 2.0 ** -len(b.head)) for b in m.blocks])
    assert np.allclose(p.theta, want, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(FIXTURE_NAMES), st.integers(0, 10 ** 6))
def test_normalization_at_arbitrary_points(name, seed):
    m = binary_model(fixture_graph(name))
    theta = np.random.default_rng(seed).uniform(-2, 2, m.n_params)
    sums = to_distribution(NestedParams(m, theta)).context_sums()
    assert np.allclose(sums, 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["verma", "iv", "five", "bidirected_pair", "conditional"]), st.integers(0, 10 ** 6))
def test_compiled_map_matches_direct_sum(name, seed):
    g = fixture_graph(name)
    m = binary_model(g)
    theta = np.random.default_rng(seed).uniform(0, 1, m.n_params)
    p = m.probabilities(theta)
    scope = m.fixed + m.random
    for cell, x in enumerate(itertools.product(*(range(n) for n in m.shape))):
        assert alternating_sum(m, theta, dict(zip(scope, x))) == pytest.approx(p[cell], abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_sum_factorizes_over_districts(seed):
    # two bidirected-disconnected parts, one with a directed edge into the other
    g = read_graph("random a b c d\na <-> b\na -> c\nc <-> d\nb -> d")
    m = binary_model(g)
    theta = np.random.default_rng(seed).uniform(-1, 1, m.n_params)
    for x in itertools.product(range(2), repeat=4):
        xv = dict(zip("abcd", x))
        whole = alternating_sum(m, theta, xv)
        parts = alternating_sum(m, theta, xv, within="ab") * alternating_sum(m, theta, xv, within="cd")
        assert whole == pytest.approx(parts, abs=1e-12)


def test_verma_recovery_formula():
    g = builtin("verma")
    m = binary_model(g)
    k = m.kernel(random_params(m, np.random.default_rng(4)).theta)
    p = from_distribution(g, m.structure, m.space, k, model=m)
    t = k.array("XEMY")
    for x, mm in itertools.product(range(2), repeat=2):
        e0 = t[x, 0].sum() / t[x].sum()
        y0 = t[x, 0, mm, 0] / t[x, 0, mm].sum()
        assert p.value(["E", "Y"], {"E": 0, "Y": 0}, {"X": x, "M": mm}) == pytest.approx(e0 * y0, abs=1e-14)


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_round_trip(name):
    g = fixture_graph(name)
    m = binary_model(g)
    rng = np.random.default_rng(7)
    for _ in range(10):
        p = random_params(m, rng)
        back = from_distribution(g, m.structure, m.space, to_distribution(p), model=m)
        assert np.abs(back.theta - p.theta).max() < 1e-10
        assert not back.arbitrary


def test_round_trip_general_levels_and_corners():
    g = builtin("verma")
    for levels, corner in [({"X": 3, "E": 2, "M": 3, "Y": 2}, {}),
                           ({"X": 2, "E": 3, "M": 2, "Y": 3}, {"E": 0, "Y": 1}),
                           ({v: 2 for v in "XEMY"}, {v: 0 for v in "XEMY"})]:
        sp = StateSpace(levels, corner)
        m = NestedModel(g, sp)
        p = random_params(m, np.random.default_rng(1))
        back = from_distribution(g, m.structure, sp, to_distribution(p), model=m)
        assert np.abs(back.theta - p.theta).max() < 1e-10


def test_recovered_parameters_in_unit_range(fixture):
    _, g = fixture
    m = binary_model(g)
    rng = np.random.default_rng(0)
    shape = (2,) * (len(g.fixed) + len(g.random))
    k = Kernel(g.random, g.fixed, positive_kernel_table(rng, shape, len(g.random)))
    p = from_distribution(g, m.structure, m.space, k, model=m)
    assert (p.theta >= 0).all() and (p.theta <= 1).all()


def test_arbitrary_flags_on_zero_margin():
    g = builtin("verma")
    m = binary_model(g)
    t = m.kernel(random_params(m, np.random.default_rng(2)).theta).array("XEMY").copy()
    t[1] = 0.0  # X never takes value 1
    t /= t.sum()
    p = from_distribution(g, m.structure, m.space, joint("XEMY", t), model=m)
    flagged = {(h, dict(tv).get("X")) for h, tv in p.arbitrary}
    assert (frozenset("E"), 1) in flagged
    assert (frozenset("EY"), 1) in flagged
    assert all(x == 1 for _, x in flagged if x is not None)


def test_scope_mismatch():
    g = builtin("verma")
    m = binary_model(g)
    with pytest.raises(Exception):
        from_distribution(g, m.structure, m.space, uniform({"a": 2}, ["a"]), model=m)


@pytest.mark.parametrize("name", ["verma", "wls_b", "five", "conditional"])
def test_jacobian_matches_finite_differences(name):
    m = binary_model(fixture_graph(name))
    theta = random_params(m, np.random.default_rng(3)).theta
    jac = m.jacobian(theta)
    h = 1e-6
    for j in range(m.n_params):
        e = np.zeros(m.n_params)
        e[j] = h
        fd = (m.probabilities(theta + e) - m.probabilities(theta - e)) / (2 * h)
        assert np.allclose(jac[:, j], fd, atol=1e-8)


@pytest.mark.parametrize("name", ["verma", "wls_a", "wls_b", "iv", "conditional"])
def test_recovery_is_smooth_inverse(name):
    g = fixture_graph(name)
    m = binary_model(g)
    theta = random_params(m, np.random.default_rng(9), margin=1e-3).theta
    jac = m.jacobian(theta)
    h = 1e-6
    prod = np.empty((m.n_params, m.n_params))
    for j in range(m.n_params):
        ks = [Kernel(m.random, m.fixed, (m.probabilities(theta) + s * h * jac[:, j]).reshape(m.shape))
              for s in (1, -1)]
        up, down = (from_distribution(g, m.structure, m.space, k, model=m).theta for k in ks)
        prod[:, j] = (up - down) / (2 * h)
    assert np.isfinite(prod).all()
    assert np.abs(prod - np.eye(m.n_params)).max() < 1e-6


def test_csv_round_trip(fixture):
    _, g = fixture
    m = binary_model(g)
    p = random_params(m, np.random.default_rng(0))
    text = params_to_csv(p)
    assert text.splitlines()[0] == "head,head_value,tail_assignment,value,arbitrary_flag"
    back = params_from_csv(m, text)
    assert np.allclose(back.theta, p.theta, rtol=1e-11)
    assert params_to_csv(back) == text


def test_csv_missing_rows():
    m = binary_model(builtin("verma"))
    text = params_to_csv(NestedParams(m, m.uniform_theta()))
    with pytest.raises(ValueError, match="missing"):
        params_from_csv(m, "\n".join(text.splitlines()[:-1]))


def test_verma_effect_free_of_x():
    g = builtin("verma")
    m = binary_model(g)
    k = m.kernel(random_params(m, np.random.default_rng(6)).theta)
    eff = do_margin(g, k, ["Y"], ["X", "M"]).array(("X", "M", "Y"))
    assert np.allclose(eff[0], eff[1], atol=1e-14)
    p = from_distribution(g, m.structure, m.space, k, model=m)
    for mm in range(2):
        assert do_probability(p, ["Y"], {"M": mm}) == pytest.approx(eff[0, mm, 0], abs=1e-14)


def test_do_parentless_vertex_is_marginal():
    g = read_graph("random a b c\na -> b\nb -> c\na -> c")
    rng = np.random.default_rng(1)
    k = joint("abc", positive_kernel_table(rng, (2, 2, 2), 3))
    eff = do_margin(g, k, ["a"], ["b"]).array(("b", "a"))
    assert np.allclose(eff[0], marginal(k, ["a"]).table) and np.allclose(eff[1], eff[0])


def test_wls_b_effect_pattern():
    g = builtin("wls_b")
    s = intrinsic_structure(g)
    assert covering_set(g, s, ["Y"], ["X"]) == frozenset("Y")
    with pytest.raises(GraphError):
        covering_set(g, s, ["M"], ["X"])
