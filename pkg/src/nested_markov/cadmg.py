"""Conditional acyclic directed mixed graphs and their combinatorics.

Vertices are string labels mapped to dense integer indices; every set
operation below runs on integer bitmasks over those indices.  Subgraphs
share the index universe of the graph they came from, so masks stay
comparable across a whole family of reachable graphs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple


class GraphError(ValueError):
    """Raised for malformed graphs or violated preconditions."""


def bits(mask: int) -> list[int]:
    """Indices of the set bits of ``mask``, ascending."""
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def least(mask: int) -> int:
    return (mask & -mask).bit_length() - 1


class Cadmg:
    """A CADMG over random vertices ``V`` and fixed vertices ``W``.

    ``directed`` holds ordered pairs ``(a, b)`` meaning ``a -> b``;
    ``bidirected`` holds unordered pairs.  Construction validates every
    structural invariant; instances are immutable afterwards.
    """

    __slots__ = (
        "universe", "_index", "random_mask", "fixed_mask",
        "parents", "siblings", "_edges",
    )

    def __init__(self, random: Iterable[str], fixed: Iterable[str] = (),
                 directed: Iterable[tuple[str, str]] = (),
                 bidirected: Iterable[tuple[str, str]] = (),
                 universe: tuple[str, ...] | None = None,
                 check: bool = True):
        random = list(dict.fromkeys(random))
        fixed = list(dict.fromkeys(fixed))
        if universe is None:
            universe = tuple(random + fixed)
        self.universe = universe
        self._index = {v: i for i, v in enumerate(universe)}
        n = len(universe)
        self.parents = [0] * n
        self.siblings = [0] * n
        self.random_mask = self._mask_of(random)
        self.fixed_mask = self._mask_of(fixed)
        if self.random_mask & self.fixed_mask:
            both = self.names(self.random_mask & self.fixed_mask)
            raise GraphError(f"vertices both random and fixed: {sorted(both)}")
        present = self.random_mask | self.fixed_mask
        for a, b in directed:
            ia, ib = self.index(a), self.index(b)
            if ia == ib:
                raise GraphError(f"self-loop on {a}")
            if not (1 << ia) & present or not (1 << ib) & present:
                raise GraphError(f"edge {a} -> {b} uses an undeclared vertex")
            if not (1 << ib) & self.random_mask:
                raise GraphError(f"edge {a} -> {b} points into fixed vertex {b}")
            self.parents[ib] |= 1 << ia
        for a, b in bidirected:
            ia, ib = self.index(a), self.index(b)
            if ia == ib:
                raise GraphError(f"self-loop on {a}")
            for v, i in ((a, ia), (b, ib)):
                if not (1 << i) & self.random_mask:
                    raise GraphError(f"bidirected edge {a} <-> {b} touches non-random vertex {v}")
            self.siblings[ia] |= 1 << ib
            self.siblings[ib] |= 1 << ia
        if check:
            self._validate()
        self._edges = None

    def _mask_of(self, names: Iterable[str]) -> int:
        mask = 0
        for v in names:
            mask |= 1 << self.index(v)
        return mask

    def index(self, v: str) -> int:
        try:
            return self._index[v]
        except KeyError:
            raise GraphError(f"unknown vertex {v!r}") from None

    def mask(self, names: Iterable[str]) -> int:
        """Bitmask of ``names``; every name must be a vertex of this graph."""
        present = self.random_mask | self.fixed_mask
        m = 0
        for v in names:
            i = self.index(v)
            if not (1 << i) & present:
                raise GraphError(f"unknown vertex {v!r}")
            m |= 1 << i
        return m

    def names(self, mask: int) -> frozenset[str]:
        return frozenset(self.universe[i] for i in bits(mask))

    def ordered(self, mask: int) -> tuple[str, ...]:
        """Names of ``mask`` in index order."""
        return tuple(self.universe[i] for i in bits(mask))

    def _validate(self) -> None:
        for w in bits(self.fixed_mask):
            if not any(self.parents[v] >> w & 1 for v in bits(self.random_mask)):
                raise GraphError(f"fixed vertex {self.universe[w]} has no children")
        self.topological_order()

    # -- basic structure -------------------------------------------------

    @property
    def random(self) -> tuple[str, ...]:
        return self.ordered(self.random_mask)

    @property
    def fixed(self) -> tuple[str, ...]:
        return self.ordered(self.fixed_mask)

    @property
    def directed_edges(self) -> frozenset[tuple[str, str]]:
        return frozenset(
            (self.universe[a], self.universe[b])
            for b in bits(self.random_mask) for a in bits(self.parents[b])
        )

    @property
    def bidirected_edges(self) -> frozenset[frozenset[str]]:
        return frozenset(
            frozenset((self.universe[a], self.universe[b]))
            for a in bits(self.random_mask) for b in bits(self.siblings[a]) if a < b
        )

    def _key(self):
        if self._edges is None:
            self._edges = (self.names(self.random_mask), self.names(self.fixed_mask),
                           self.directed_edges, self.bidirected_edges)
        return self._edges

    def __eq__(self, other):
        if not isinstance(other, Cadmg):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        parts = [f"random={list(self.random)}"]
        if self.fixed_mask:
            parts.append(f"fixed={list(self.fixed)}")
        d = sorted(f"{a}->{b}" for a, b in self.directed_edges)
        b = sorted("<->".join(sorted(e)) for e in self.bidirected_edges)
        if d:
            parts.append(f"directed={d}")
        if b:
            parts.append(f"bidirected={b}")
        return f"Cadmg({', '.join(parts)})"

    def pa(self, mask: int) -> int:
        out = 0
        for v in bits(mask):
            out |= self.parents[v]
        return out

    def topological_order(self) -> list[int]:
        """Random vertices so that each precedes its random children.

        Ties are broken by index, so the order is deterministic.
        """
        remaining = self.random_mask
        order = []
        while remaining:
            ready = [v for v in bits(remaining) if not self.parents[v] & remaining]
            if not ready:
                raise GraphError(f"directed cycle among {sorted(self.names(remaining))}")
            order.append(ready[0])
            remaining &= ~(1 << ready[0])
        return order

    # -- mask-level operations (used inside the package) -----------------

    def ancestors_mask(self, mask: int, within: int | None = None) -> int:
        """Reflexive ancestors of ``mask`` using only vertices in ``within``."""
        if within is None:
            within = self.random_mask | self.fixed_mask
        result = mask
        frontier = mask
        while frontier:
            new = 0
            for v in bits(frontier):
                new |= self.parents[v] & within
            frontier = new & ~result
            result |= frontier
        return result

    def district_of(self, mask: int, within: int) -> int:
        """Union of the districts of ``G[within]`` that meet ``mask``."""
        result = mask & within
        frontier = result
        while frontier:
            new = 0
            for v in bits(frontier):
                new |= self.siblings[v] & within
            frontier = new & ~result
            result |= frontier
        return result

    def districts_mask(self, within: int | None = None) -> list[int]:
        if within is None:
            within = self.random_mask
        out = []
        left = within
        while left:
            d = self.district_of(left & -left, within)
            out.append(d)
            left &= ~d
        return out

    def sterile_mask(self, mask: int) -> int:
        return mask & ~self.pa(mask)

    def is_bidirected_connected(self, mask: int) -> bool:
        return mask != 0 and self.district_of(mask & -mask, mask) == mask

    def sub(self, mask: int) -> "Cadmg":
        """``G[C]`` for a bitmask ``C`` of random vertices."""
        if mask & ~self.random_mask:
            raise GraphError(f"{sorted(self.names(mask & ~self.random_mask))} are not random vertices")
        g = Cadmg.__new__(Cadmg)
        g.universe = self.universe
        g._index = self._index
        g.random_mask = mask
        g.fixed_mask = self.pa(mask) & ~mask
        n = len(self.universe)
        g.parents = [self.parents[i] if mask >> i & 1 else 0 for i in range(n)]
        g.siblings = [self.siblings[i] & mask if mask >> i & 1 else 0 for i in range(n)]
        g._edges = None
        return g


def _as_mask(g: Cadmg, vertices: Iterable[str] | int) -> int:
    if isinstance(vertices, int):
        return vertices
    if isinstance(vertices, str):
        vertices = [vertices]
    return g.mask(vertices)


def _require_random(g: Cadmg, mask: int) -> None:
    bad = mask & ~g.random_mask
    if bad:
        raise GraphError(f"not random vertices: {sorted(g.names(bad))}")


# -- public graph queries ----------------------------------------------------

def districts(g: Cadmg) -> list[frozenset[str]]:
    """Districts of ``g``, ordered by least vertex index."""
    return [g.names(d) for d in g.districts_mask()]


def ancestors(g: Cadmg, vertices: Iterable[str]) -> frozenset[str]:
    return g.names(g.ancestors_mask(_as_mask(g, vertices)))


def parents(g: Cadmg, vertices: Iterable[str]) -> frozenset[str]:
    return g.names(g.pa(_as_mask(g, vertices)))


def sterile(g: Cadmg, vertices: Iterable[str]) -> frozenset[str]:
    """``C`` minus the parents of ``C``: the sink nodes of the induced subgraph."""
    m = _as_mask(g, vertices)
    _require_random(g, m)
    return g.names(g.sterile_mask(m))


def subgraph_into(g: Cadmg, vertices: Iterable[str]) -> Cadmg:
    """The graph ``G[C]``: random ``C``, fixed ``pa(C) \\ C``, edges with arrowheads in ``C``."""
    return g.sub(_as_mask(g, vertices))


def apply_m(g: Cadmg, vertices: Iterable[str]) -> Cadmg:
    """Marginalize to a random-ancestral set."""
    a = _as_mask(g, vertices)
    _require_random(g, a)
    outside = g.ancestors_mask(a, g.random_mask) & ~a
    if outside:
        v = g.universe[least(outside)]
        raise GraphError(f"set is not random-ancestral: {v} is a random ancestor outside it")
    return g.sub(a)


def apply_d(g: Cadmg, vertices: Iterable[str]) -> Cadmg:
    """Restrict to a district."""
    d = _as_mask(g, vertices)
    _require_random(g, d)
    if d == 0 or g.district_of(d & -d, g.random_mask) != d:
        if d:
            full = g.district_of(d & -d, g.random_mask)
            extra = (full ^ d)
            v = g.universe[least(extra)]
            raise GraphError(f"set is not a district: {v} breaks it")
        raise GraphError("empty set is not a district")
    return g.sub(d)


class Closure(NamedTuple):
    vertices: frozenset[str]
    intrinsic: bool


def _closure_mask(g: Cadmg, b: int, first: str = "m") -> int:
    r = g.random_mask
    step_m = first == "m"
    unchanged = 0
    while unchanged < 2:
        if step_m:
            nr = g.ancestors_mask(b, r) & r
        else:
            nr = g.district_of(b, r)
        unchanged = unchanged + 1 if nr == r else 0
        r = nr
        step_m = not step_m
    return r


def intrinsic_closure(g: Cadmg, vertices: Iterable[str], first: str = "m") -> Closure:
    """Fixpoint of alternating ancestral margins and district restrictions.

    ``first`` selects which reduction starts the alternation; the fixpoint
    does not depend on it.
    """
    b = _as_mask(g, vertices)
    if not b:
        raise GraphError("intrinsic closure of the empty set")
    _require_random(g, b)
    r = _closure_mask(g, b, first)
    return Closure(g.names(r), g.is_bidirected_connected(r))


# -- intrinsic sets ------------------------------------------------------------

def _head_sort_key(s: int) -> tuple:
    return (popcount(s), tuple(bits(s)))


@dataclass(frozen=True)
class Head:
    """A recursive head with its intrinsic set and tail, all as bitmasks."""

    head: int
    intrinsic: int
    tail: int


@dataclass
class IntrinsicStructure:
    """Intrinsic sets of a graph with heads, tails and the head partition.

    ``heads`` is sorted by (size of intrinsic set, vertex indices), which
    fixes the layout of flat parameter vectors.
    """

    graph: Cadmg
    heads: list[Head]
    _by_head: dict[int, Head] = field(default_factory=dict, repr=False)
    _partitions: dict[int, tuple[int, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_head = {h.head: h for h in self.heads}
        if len(self._by_head) != len(self.heads):
            raise AssertionError("two intrinsic sets share a recursive head")

    @property
    def intrinsic_sets(self) -> list[frozenset[str]]:
        return [self.graph.names(h.intrinsic) for h in self.heads]

    def head_sets(self) -> list[frozenset[str]]:
        return [self.graph.names(h.head) for h in self.heads]

    def lookup(self, head: Iterable[str] | int) -> Head:
        m = _as_mask(self.graph, head)
        try:
            return self._by_head[m]
        except KeyError:
            raise GraphError(f"{sorted(self.graph.names(m))} is not a recursive head") from None

    def intrinsic_of(self, head) -> frozenset[str]:
        return self.graph.names(self.lookup(head).intrinsic)

    def tail_of(self, head) -> frozenset[str]:
        return self.graph.names(self.lookup(head).tail)

    def precedes(self, h1, h2) -> bool:
        """Strict head order: the intrinsic set of ``h1`` is a proper subset of that of ``h2``."""
        s1 = self.lookup(h1).intrinsic
        s2 = self.lookup(h2).intrinsic
        return s1 != s2 and s1 & s2 == s1

    def order_pairs(self) -> list[tuple[frozenset[str], frozenset[str]]]:
        """All pairs ``(H1, H2)`` with ``H1`` strictly below ``H2``."""
        out = []
        for a in self.heads:
            for b in self.heads:
                if a is not b and a.intrinsic & b.intrinsic == a.intrinsic:
                    out.append((self.graph.names(a.head), self.graph.names(b.head)))
        return out

    def maximal_heads(self, c: int) -> list[int]:
        """Heads inside ``c`` that are maximal under the head order."""
        inside = [h for h in self.heads if h.head & ~c == 0]
        out = []
        for h in inside:
            s = h.intrinsic
            if not any(o.intrinsic != s and o.intrinsic & s == s for o in inside):
                out.append(h.head)
        return out

    def partition_mask(self, c: int) -> tuple[int, ...]:
        """``<C>`` as a tuple of head bitmasks sorted by least vertex."""
        cached = self._partitions.get(c)
        if cached is not None:
            return cached
        if c == 0:
            return ()
        phi = self.maximal_heads(c)
        covered = 0
        for h in phi:
            if covered & h:
                raise AssertionError("overlapping maximal heads; head order is not partition suitable")
            covered |= h
        blocks = tuple(sorted(phi + list(self.partition_mask(c & ~covered)), key=least))
        self._partitions[c] = blocks
        return blocks

    def partition(self, vertices: Iterable[str]) -> list[frozenset[str]]:
        m = _as_mask(self.graph, vertices)
        _require_random(self.graph, m)
        return [self.graph.names(h) for h in self.partition_mask(m)]


def reachable_sets(g: Cadmg) -> set[int]:
    """Random vertex sets of every graph reachable from ``g``.

    Breadth-first search from ``V``; each visited ``R`` expands into the
    districts of ``G[R]`` and into ``R`` minus each sterile vertex.
    """
    start = g.random_mask
    seen = {start} if start else set()
    queue = deque(seen)
    while queue:
        r = queue.popleft()
        nxt = [d for d in g.districts_mask(r) if d != r]
        nxt += [r & ~(1 << h) for h in bits(g.sterile_mask(r))]
        for s in nxt:
            if s and s not in seen:
                seen.add(s)
                queue.append(s)
    return seen


def intrinsic_structure(g: Cadmg) -> IntrinsicStructure:
    sets = [s for s in reachable_sets(g) if g.is_bidirected_connected(s)]
    sets.sort(key=_head_sort_key)
    heads = [Head(g.sterile_mask(s), s, g.pa(s)) for s in sets]
    return IntrinsicStructure(g, heads)


# -- text format -----------------------------------------------------------------

def parse_graph(text: str, allow_latent: bool = False):
    """Parse the line-oriented graph format.

    Returns ``(random, fixed, latent, directed, bidirected)`` name lists;
    :func:`read_graph` wraps this into a :class:`Cadmg`.
    """
    random, fixed, latent = [], [], []
    directed, bidirected = [], []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        kind = toks[0]
        if kind in ("random", "fixed", "latent"):
            if kind == "latent" and not allow_latent:
                raise GraphError(f"line {lineno}: 'latent' is not allowed here")
            if len(toks) < 2:
                raise GraphError(f"line {lineno}: '{kind}' needs at least one name")
            for name in toks[1:]:
                if name in seen:
                    raise GraphError(f"line {lineno}: vertex {name!r} declared twice")
                if name in ("->", "<->"):
                    raise GraphError(f"line {lineno}: bad vertex name {name!r}")
                seen.add(name)
            {"random": random, "fixed": fixed, "latent": latent}[kind].extend(toks[1:])
        elif len(toks) == 3 and toks[1] in ("->", "<->"):
            a, op, b = toks
            for name in (a, b):
                if name not in seen:
                    raise GraphError(f"line {lineno}: undeclared vertex {name!r}")
            (directed if op == "->" else bidirected).append((a, b))
        else:
            bad = toks[1] if len(toks) > 1 else toks[0]
            raise GraphError(f"line {lineno}: cannot parse statement at token {bad!r}")
    return random, fixed, latent, directed, bidirected


def read_graph(text: str) -> Cadmg:
    random, fixed, _, directed, bidirected = parse_graph(text)
    return Cadmg(random, fixed, directed, bidirected)


def format_graph(g: Cadmg) -> str:
    lines = [f"random {' '.join(g.random)}"]
    if g.fixed_mask:
        lines.append(f"fixed {' '.join(g.fixed)}")
    for b in bits(g.random_mask):
        for a in bits(g.parents[b]):
            lines.append(f"{g.universe[a]} -> {g.universe[b]}")
    for a in bits(g.random_mask):
        for b in bits(g.siblings[a]):
            if a < b:
                lines.append(f"{g.universe[a]} <-> {g.universe[b]}")
    return "\n".join(lines) + "\n"
