import itertools

import pytest
from hypothesis import given, settings

from nested_markov.cadmg import (Cadmg, GraphError, ancestors, apply_d, apply_m, districts, format_graph,
                                 intrinsic_closure, intrinsic_structure, parse_graph, reachable_sets,
                                 read_graph, sterile, subgraph_into)
from nested_markov.graphs import builtin

from conftest import cadmgs

F = frozenset


def sets(*groups):
    return {F(g) for g in groups}


# ---------------------------------------------------------------- fixtures

def test_verma_districts():
    assert set(districts(builtin("verma"))) == sets("X", "M", "EY")


def test_conditional_districts():
    assert set(districts(builtin("conditional"))) == sets({"3"}, {"2", "4", "5"})


def test_districts_without_bidirected_edges():
    g = read_graph("random a b c\na -> b\nb -> c")
    assert districts(g) == [F("a"), F("b"), F("c")]


def test_district_order_by_least_vertex():
    g = builtin("verma")
    assert districts(g) == [F("X"), F("EY"), F("M")]


def test_ancestors():
    assert ancestors(builtin("conditional"), ["3"]) == F({"1", "2", "3"})
    assert ancestors(builtin("conditional"), []) == F()
    assert ancestors(builtin("iv"), ["Y"]) == F("ZXY")
    with pytest.raises(GraphError):
        ancestors(builtin("iv"), ["Q"])


def test_sterile():
    g = builtin("conditional")
    assert sterile(g, ["2", "4", "5"]) == F({"2", "4", "5"})
    assert sterile(g, ["2", "3", "5"]) == F({"3", "5"})
    assert sterile(g, ["3"]) == F({"3"})


def test_subgraph_verma_ey():
    h = subgraph_into(builtin("verma"), list("EY"))
    assert set(h.random) == set("EY") and set(h.fixed) == set("XM")
    assert h.directed_edges == {("X", "E"), ("M", "Y")}
    assert h.bidirected_edges == {F("EY")}


def test_subgraph_identity():
    g = builtin("verma")
    assert subgraph_into(g, g.random) == g


def test_subgraph_conditional_45():
    h = subgraph_into(builtin("conditional"), ["4", "5"])
    assert set(h.random) == {"4", "5"} and set(h.fixed) == {"3"}
    assert h.directed_edges == {("3", "4")}
    assert h.bidirected_edges == {F({"4", "5"})}


def test_apply_d_then_m():
    g = builtin("conditional")
    a = apply_d(g, ["2", "4", "5"])
    assert set(a.random) == {"2", "4", "5"} and set(a.fixed) == {"1", "3"}
    assert a.directed_edges == {("1", "2"), ("3", "4")}
    b = apply_m(a, ["2", "4"])
    assert set(b.random) == {"2", "4"} and set(b.fixed) == {"1", "3"}
    assert b.bidirected_edges == set()
    c = apply_m(a, ["4", "5"])
    assert set(c.random) == {"4", "5"} and set(c.fixed) == {"3"}


def test_apply_identity():
    g = builtin("verma")
    assert apply_m(g, g.random) == g


def test_apply_errors_name_vertex():
    g = builtin("verma")
    with pytest.raises(GraphError, match="X"):
        apply_m(g, ["M"])
    with pytest.raises(GraphError, match="Y"):
        apply_d(g, ["E"])


def test_reachable_verma_subgraphs():
    g = builtin("verma")
    reach = {g.names(r) for r in reachable_sets(g)}
    for s in ["EY", "XEM", "XE", "XEMY", "X", "E", "M", "Y"]:
        assert F(s) in reach
    # X is not sterile while E is present, and E-M-Y is not a district
    assert F("EMY") not in reach
    assert F("XMY") not in reach


def test_conditional_reachable_graphs():
    g = builtin("conditional")
    reach = {g.names(r) for r in reachable_sets(g)}
    assert {F({"2", "4", "5"}), F({"2", "4"}), F({"4", "5"})} <= reach


def test_closures():
    assert intrinsic_closure(builtin("iv"), ["Y"]).vertices == F("XY")
    c = intrinsic_closure(builtin("conditional"), ["4", "5"])
    assert c.vertices == F({"4", "5"}) and c.intrinsic
    g = read_graph("random a b c\na -> b\nb -> c\na <-> c")
    assert not intrinsic_closure(g, ["a", "b"]).intrinsic


def test_conditional_intrinsic_sets():
    s = intrinsic_structure(builtin("conditional"))
    expect = sets({"3"}, {"2"}, {"4"}, {"5"}, {"2", "5"}, {"4", "5"}, {"2", "4", "5"})
    assert set(s.intrinsic_sets) == expect
    assert set(s.head_sets()) == expect


def test_verma_heads_and_tails():
    s = intrinsic_structure(builtin("verma"))
    assert set(s.head_sets()) == sets("X", "E", "M", "Y", "EY")
    assert s.tail_of(list("EY")) == F("XM")
    assert s.tail_of(list("Y")) == F("M")
    assert s.tail_of(list("E")) == F("X")
    assert s.tail_of(list("M")) == F("E")
    assert s.tail_of(list("X")) == F()
    assert s.precedes(list("E"), list("EY")) and s.precedes(list("Y"), list("EY"))
    assert not s.precedes(list("EY"), list("E"))


def test_disconnected_heads():
    s = intrinsic_structure(read_graph("random a b c"))
    assert set(s.head_sets()) == sets("a", "b", "c")
    assert all(not t for t in (s.tail_of([v]) for v in "abc"))


def test_verma_partitions():
    s = intrinsic_structure(builtin("verma"))
    assert set(s.partition(list("XEY"))) == sets("X", "EY")
    assert set(s.partition(list("MY"))) == sets("M", "Y")
    assert s.partition([]) == []


def test_wls_heads():
    sa = intrinsic_structure(builtin("wls_a"))
    assert sa.tail_of(list("EY")) == F("XM")
    sb = intrinsic_structure(builtin("wls_b"))
    assert sb.tail_of(list("EY")) == F("X")
    assert sb.tail_of(list("Y")) == F("X")


# ---------------------------------------------------------------- validation and format

@pytest.mark.parametrize("text, fragment", [
    ("random a\nfixed a", "a"),
    ("random a b\na -> a", "a"),
    ("random a\nfixed w\na -> w", "w"),
    ("random a\nfixed w\nw <-> a", "w"),
    ("random a b\nfixed w\na -> b", "w"),
    ("random a b\na -> b\nb -> a", "cycle"),
])
def test_invalid_graphs(text, fragment):
    with pytest.raises(GraphError, match=fragment):
        read_graph(text)


def test_parse_errors_report_line():
    with pytest.raises(GraphError, match="line 3"):
        read_graph("random a b\n# comment\na => b")
    with pytest.raises(GraphError, match="line 2.*q"):
        read_graph("random a b\na -> q")


def test_latent_statement():
    random, fixed, latent, directed, bidirected = parse_graph("random a b\nlatent u\nu -> a\nu -> b",
                                                              allow_latent=True)
    assert latent == ["u"] or tuple(latent) == ("u",)
    with pytest.raises(GraphError):
        read_graph("random a b\nlatent u\nu -> a")


def test_format_round_trip(fixture):
    _, g = fixture
    assert read_graph(format_graph(g)) == g


# ---------------------------------------------------------------- properties

@settings(max_examples=150, deadline=None)
@given(cadmgs())
def test_districts_partition_random_vertices(g):
    ds = districts(g)
    assert sum(len(d) for d in ds) == len(g.random)
    assert F().union(*ds) == F(g.random)


@settings(max_examples=150, deadline=None)
@given(cadmgs(max_random=6, max_fixed=2, max_total=8))
def test_closure_order_independent(g):
    for r in range(1, len(g.random) + 1):
        for b in itertools.combinations(g.random, r):
            if g.is_bidirected_connected(g.mask(b)):
                assert intrinsic_closure(g, b, "m") == intrinsic_closure(g, b, "d")


@settings(max_examples=100, deadline=None)
@given(cadmgs())
def test_closure_between_head_and_set(g):
    s = intrinsic_structure(g)
    for h in s.heads:
        rest = [v for v in g.names(h.intrinsic & ~h.head)]
        for r in range(len(rest) + 1):
            for extra in itertools.combinations(rest, r):
                a = g.names(h.head) | F(extra)
                assert intrinsic_closure(g, a).vertices == g.names(h.intrinsic)


@settings(max_examples=150, deadline=None)
@given(cadmgs())
def test_structure_invariants(g):
    s = intrinsic_structure(g)
    heads = s.head_sets()
    assert len(set(heads)) == len(heads) == len(set(s.intrinsic_sets))
    for v in g.random:
        assert F([v]) in heads
    for h in s.heads:
        assert h.head & h.tail == 0
        assert h.intrinsic & ~h.head & ~h.tail == 0
        assert h.tail == g.pa(h.intrinsic)


@settings(max_examples=100, deadline=None)
@given(cadmgs())
def test_reachable_subgraph_preserves_intrinsic_sets(g):
    s = intrinsic_structure(g)
    for r in reachable_sets(g):
        sub = intrinsic_structure(g.sub(r))
        inside = {(h.head, h.intrinsic, h.tail) for h in s.heads if h.intrinsic & ~r == 0}
        assert {(h.head, h.intrinsic, h.tail) for h in sub.heads} == inside
        for c in range(1, r + 1):
            if c & ~r == 0:
                assert sub.partition_mask(c) == s.partition_mask(c)


def _subsets(g):
    n = len(g.random)
    idx = [g.index(v) for v in g.random]
    for r in range(n + 1):
        for combo in itertools.combinations(idx, r):
            yield sum(1 << i for i in combo)


@settings(max_examples=100, deadline=None)
@given(cadmgs(max_random=7, max_fixed=0, max_total=7))
def test_partition_laws(g):
    s = intrinsic_structure(g)
    dists = g.districts_mask()
    heads = {h.head for h in s.heads}
    for c in _subsets(g):
        blocks = s.partition_mask(c)
        covered = 0
        for b in blocks:
            assert b in heads
            assert covered & b == 0
            covered |= b
        assert covered == c
        for b in blocks:
            assert set(s.partition_mask(c & ~b)) == set(blocks) - {b}
        split = [b for d in dists for b in s.partition_mask(c & d)]
        assert set(split) == set(blocks)


@settings(max_examples=100, deadline=None)
@given(cadmgs())
def test_head_order_partition_suitable(g):
    s = intrinsic_structure(g)
    for a in s.heads:
        for b in s.heads:
            if a is b or not a.head & b.head:
                continue
            union = a.head | b.head
            assert any(h.head & ~union == 0
                       and h.intrinsic & a.intrinsic == a.intrinsic
                       and h.intrinsic & b.intrinsic == b.intrinsic for h in s.heads)
