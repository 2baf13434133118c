"""Head/tail parameters of the nested Markov model.

The map from parameters to probabilities is an alternating sum over
supersets of the non-corner vertices of each cell; every term is a
product of parameters, one per block of the head partition.  A
:class:`NestedModel` expands that sum once into a polynomial so each
evaluation (and its Jacobian) is a couple of vectorized numpy calls.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cadmg import Cadmg, GraphError, IntrinsicStructure, bits, intrinsic_structure
from .kernel import Kernel, KernelError, condition, marginal, reach_kernel


@dataclass(frozen=True)
class StateSpace:
    """Level counts and corner-point levels per vertex.

    The corner defaults to the highest level, so binary variables are
    parameterized through the probability of level ``0``.
    """

    levels: Mapping[str, int]
    corner: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        levels = dict(self.levels)
        corner = {v: n - 1 for v, n in levels.items()}
        for v, k in dict(self.corner).items():
            if v not in levels:
                raise ValueError(f"corner given for unknown vertex {v!r}")
            corner[v] = k
        for v, n in levels.items():
            if n < 2:
                raise ValueError(f"vertex {v} needs at least two levels, got {n}")
            if not 0 <= corner[v] < n:
                raise ValueError(f"corner {corner[v]} out of range for vertex {v} with {n} levels")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "corner", corner)

    @classmethod
    def binary(cls, vertices: Iterable[str], corner: Mapping[str, int] | None = None) -> "StateSpace":
        return cls({v: 2 for v in vertices}, corner or {})

    def reduced(self, v: str) -> list[int]:
        return [x for x in range(self.levels[v]) if x != self.corner[v]]

    def size(self, vertices: Iterable[str]) -> int:
        return int(np.prod([self.levels[v] for v in vertices], dtype=np.int64))

    def reduced_size(self, vertices: Iterable[str]) -> int:
        return int(np.prod([self.levels[v] - 1 for v in vertices], dtype=np.int64))


def dimension(s: IntrinsicStructure, sp: StateSpace) -> int:
    """Number of free parameters: reduced head values times tail values, summed over heads."""
    g = s.graph
    return sum(sp.reduced_size(g.ordered(h.head)) * sp.size(g.ordered(h.tail)) for h in s.heads)


@dataclass(frozen=True)
class HeadBlock:
    head: tuple[str, ...]
    intrinsic: tuple[str, ...]
    tail: tuple[str, ...]
    offset: int
    n_head_values: int
    n_tail_values: int

    @property
    def size(self) -> int:
        return self.n_head_values * self.n_tail_values


class NestedModel:
    """Graph, intrinsic structure, state space and parameter layout together.

    Flat parameter vectors list heads in structure order; within a head,
    tail configurations run row-major over the tail (graph index order)
    and, inside each, reduced head values run row-major over the head.
    """

    def __init__(self, graph: Cadmg, space: StateSpace, structure: IntrinsicStructure | None = None):
        missing = set(graph.random + graph.fixed) - set(space.levels)
        if missing:
            raise ValueError(f"state space lacks levels for {sorted(missing)}")
        self.graph = graph
        self.space = space
        self.structure = structure if structure is not None else intrinsic_structure(graph)
        g = graph
        blocks = []
        offset = 0
        for h in self.structure.heads:
            head, tail = g.ordered(h.head), g.ordered(h.tail)
            b = HeadBlock(head, g.ordered(h.intrinsic), tail, offset,
                          space.reduced_size(head), space.size(tail))
            blocks.append(b)
            offset += b.size
        self.blocks = blocks
        self.n_params = offset
        self._block_of = {h.head: b for h, b in zip(self.structure.heads, blocks)}
        self.random = graph.random
        self.fixed = graph.fixed
        self.shape = tuple(space.levels[v] for v in self.fixed + self.random)
        self.n_cells = int(np.prod(self.shape, dtype=np.int64))
        self._compile()

    def block(self, head: Iterable[str] | int) -> HeadBlock:
        return self._block_of[self.structure.lookup(head).head]

    def index(self, head: Iterable[str], head_value: Mapping[str, int],
              tail_value: Mapping[str, int]) -> int:
        """Flat position of ``q_H(head_value | tail_value)``."""
        b = self.block(head)
        sp = self.space
        t = 0
        for v in b.tail:
            t = t * sp.levels[v] + tail_value[v]
        h = 0
        for v in b.head:
            red = sp.reduced(v)
            if head_value[v] not in red:
                raise KeyError(f"level {head_value[v]} of {v} is the corner point or out of range")
            h = h * len(red) + red.index(head_value[v])
        return b.offset + t * b.n_head_values + h

    def labels(self) -> list[tuple[HeadBlock, dict[str, int], dict[str, int]]]:
        """``(block, head_value, tail_value)`` for every flat position."""
        out = []
        sp = self.space
        for b in self.blocks:
            tails = itertools.product(*(range(sp.levels[v]) for v in b.tail))
            for tv in tails:
                for hv in itertools.product(*(sp.reduced(v) for v in b.head)):
                    out.append((b, dict(zip(b.head, hv)), dict(zip(b.tail, tv))))
        return out

    # -- polynomial expansion -----------------------------------------------

    def _compile(self) -> None:
        g, sp, s = self.graph, self.space, self.structure
        scope = self.fixed + self.random
        pos = {v: i for i, v in enumerate(scope)}
        vmask = g.random_mask
        cells, signs, factor_lists = [], [], []
        for cell, x in enumerate(itertools.product(*(range(n) for n in self.shape))):
            o = 0
            for v in self.random:
                if x[pos[v]] != sp.corner[v]:
                    o |= 1 << g.index(v)
            free = vmask & ~o
            free_bits = bits(free)
            for r in range(len(free_bits) + 1):
                for extra in itertools.combinations(free_bits, r):
                    c = o
                    for i in extra:
                        c |= 1 << i
                    sign = -1.0 if r % 2 else 1.0
                    blocks = s.partition_mask(c)
                    extra_names = [g.universe[i] for i in extra]
                    for yv in itertools.product(*(sp.reduced(v) for v in extra_names)):
                        y = dict(zip(extra_names, yv))
                        idx = []
                        for hm in blocks:
                            b = self._block_of[hm]
                            hv = {v: y.get(v, x[pos[v]]) for v in b.head}
                            tv = {v: x[pos[v]] for v in b.tail}
                            idx.append(self.index(b.head, hv, tv))
                        cells.append(cell)
                        signs.append(sign)
                        factor_lists.append(idx)
        width = max((len(f) for f in factor_lists), default=0)
        pad = self.n_params
        idx = np.full((len(factor_lists), max(width, 1)), pad, dtype=np.int64)
        for i, f in enumerate(factor_lists):
            idx[i, :len(f)] = f
        self._cells = np.asarray(cells, dtype=np.int64)
        self._signs = np.asarray(signs)
        self._idx = idx

    def _extended(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        return np.append(theta, 1.0)

    def probabilities(self, theta) -> np.ndarray:
        """Flat cell probabilities (context-major) for parameter vector ``theta``."""
        vals = self._extended(theta)[self._idx].prod(axis=1) * self._signs
        return np.bincount(self._cells, weights=vals, minlength=self.n_cells)

    def jacobian(self, theta) -> np.ndarray:
        """Exact derivative of :meth:`probabilities`, shape ``(cells, params)``."""
        f = self._extended(theta)[self._idx]
        ones = np.ones((f.shape[0], 1))
        before = np.cumprod(np.hstack([ones, f[:, :-1]]), axis=1)
        after = np.cumprod(np.hstack([ones, f[:, :0:-1]]), axis=1)[:, ::-1]
        loo = before * after * self._signs[:, None]
        jac = np.zeros((self.n_cells, self.n_params + 1))
        for j in range(f.shape[1]):
            np.add.at(jac, (self._cells, self._idx[:, j]), loo[:, j])
        return jac[:, :-1]

    def kernel(self, theta) -> Kernel:
        return Kernel(self.random, self.fixed, self.probabilities(theta).reshape(self.shape))

    def uniform_theta(self) -> np.ndarray:
        """Parameters of the uniform distribution."""
        theta = np.empty(self.n_params)
        for b in self.blocks:
            theta[b.offset:b.offset + b.size] = 1.0 / self.space.size(b.head)
        return theta


@dataclass(frozen=True, eq=False)
class NestedParams:
    """Parameter values for a :class:`NestedModel`.

    ``arbitrary`` holds ``(head, tail assignment)`` pairs whose value is
    not identified by the distribution it was recovered from.
    """

    model: NestedModel
    theta: np.ndarray
    arbitrary: frozenset = frozenset()

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.model.n_params,):
            raise ValueError(f"expected {self.model.n_params} parameter values, got {theta.shape}")
        object.__setattr__(self, "theta", theta)

    @property
    def values(self) -> dict:
        """``(head, head_value, tail_value) -> q`` with assignments as sorted item tuples."""
        out = {}
        for (b, hv, tv), q in zip(self.model.labels(), self.theta):
            out[(frozenset(b.head), tuple(sorted(hv.items())), tuple(sorted(tv.items())))] = q
        return out

    def value(self, head, head_value: Mapping[str, int], tail_value: Mapping[str, int]) -> float:
        return float(self.theta[self.model.index(head, head_value, tail_value)])

    @property
    def feasible(self) -> bool:
        return bool((self.model.probabilities(self.theta) >= 0).all())


def to_distribution(p: NestedParams) -> Kernel:
    """The kernel induced by the parameters, unclamped.

    Context sums are one for any parameter values; entries go negative
    when the parameters are infeasible (see :attr:`NestedParams.feasible`).
    """
    if not np.isfinite(p.theta).all():
        raise ValueError("parameter vector has missing (non-finite) values")
    return p.model.kernel(p.theta)


def alternating_sum(model: NestedModel, theta, x: Mapping[str, int], within: Iterable[str] | None = None) -> float:
    """Evaluate the alternating sum for one cell directly from its definition.

    ``within`` restricts the subsets ``C`` to a vertex set (with ``O``
    intersected accordingly); by default they range over all random
    vertices.  Slow; kept as an independent check on the compiled form.
    """
    g, sp, s = model.graph, model.space, model.structure
    theta = np.asarray(theta, dtype=float)
    universe = g.random_mask if within is None else g.mask(within)
    o = 0
    for v in g.ordered(universe):
        if x[v] != sp.corner[v]:
            o |= 1 << g.index(v)
    total = 0.0
    free = bits(universe & ~o)
    for r in range(len(free) + 1):
        for extra in itertools.combinations(free, r):
            c = o | sum(1 << i for i in extra)
            names = [g.universe[i] for i in extra]
            for yv in itertools.product(*(sp.reduced(v) for v in names)):
                y = dict(x)
                y.update(zip(names, yv))
                term = 1.0
                for hm in s.partition_mask(c):
                    b = model.block(hm)
                    term *= theta[model.index(b.head, {v: y[v] for v in b.head},
                                              {v: x[v] for v in b.tail})]
                total += (-1) ** r * term
    return total


def from_distribution(g: Cadmg, s: IntrinsicStructure | None, sp: StateSpace, k: Kernel,
                      model: NestedModel | None = None) -> NestedParams:
    """Recover head parameters from a kernel.

    Each ``q_H(y_H | x_T)`` is the conditional probability of ``X_H = y_H``
    given ``X_{S \\ H}`` under the kernel of the intrinsic set ``S`` of
    ``H``.  Tail values whose margin has zero mass are recorded as
    arbitrary and receive the uniform value.
    """
    if set(k.random) != set(g.random) or set(k.fixed) != set(g.fixed):
        raise KernelError(
            f"kernel scope ({sorted(k.random)} | {sorted(k.fixed)}) does not match graph "
            f"({sorted(g.random)} | {sorted(g.fixed)})")
    if model is None:
        model = NestedModel(g, sp, s)
    for v in k.scope:
        if k.levels[v] != sp.levels[v]:
            raise KernelError(f"kernel has {k.levels[v]} levels for {v}, state space {sp.levels[v]}")
    theta = np.empty(model.n_params)
    arbitrary = set()
    for b in model.blocks:
        f_s = reach_kernel(g, k, b.intrinsic, strict=False)
        cond = condition(f_s, set(b.intrinsic) - set(b.head))
        arr = cond.array(b.tail + b.head)
        for i, v in enumerate(b.head):
            arr = np.take(arr, sp.reduced(v), axis=len(b.tail) + i)
        theta[b.offset:b.offset + b.size] = arr.reshape(-1)
        for tv in _unidentified_tails(k, b.tail):
            arbitrary.add((frozenset(b.head), tuple(sorted(tv.items()))))
    return NestedParams(model, theta, frozenset(arbitrary))


def _unidentified_tails(k: Kernel, tail: Sequence[str]) -> list[dict[str, int]]:
    """Tail values with zero margin for every setting of the fixed vertices outside the tail."""
    if not tail:
        return []
    rt = [v for v in tail if v in k.random]
    m = marginal(k, rt)
    drop = tuple(i for i, v in enumerate(m.fixed) if v not in tail)
    best = m.table.max(axis=drop) if drop else m.table
    order = [v for v in m.scope if v in tail]
    out = []
    for idx in np.argwhere(best == 0):
        a = dict(zip(order, (int(i) for i in idx)))
        out.append({v: a[v] for v in tail})
    return out


def random_params(model: NestedModel, rng: np.random.Generator, max_tries: int = 200,
                  margin: float = 0.0) -> NestedParams:
    """Draw a feasible parameter point by rejection.

    Each head gets a uniform point of the simplex over its full value
    space.  A draw whose induced cells are not all above ``margin`` is
    pulled halfway towards the uniform distribution's parameters, which
    are strictly feasible, until it passes; after ``max_tries`` rejected
    shrink sequences a fresh draw is not attempted any more.
    """
    sp = model.space
    centre = model.uniform_theta()
    for _ in range(max_tries):
        theta = np.empty(model.n_params)
        for b in model.blocks:
            draws = rng.dirichlet(np.ones(sp.size(b.head)), size=b.n_tail_values)
            red = draws.reshape((b.n_tail_values,) + tuple(sp.levels[v] for v in b.head))
            for i, v in enumerate(b.head):
                red = np.take(red, sp.reduced(v), axis=1 + i)
            theta[b.offset:b.offset + b.size] = red.reshape(-1)
        for _ in range(30):
            if (model.probabilities(theta) > margin).all():
                return NestedParams(model, theta)
            theta = centre + 0.5 * (theta - centre)
    raise RuntimeError(f"no feasible parameter point found in {max_tries} draws")


def do_probability(p: NestedParams, head: Iterable[str], tail_value: Mapping[str, int],
                   head_value: Mapping[str, int] | None = None) -> float:
    """``P(X_H = y_H | do(X_T = x_T))`` read off the parameter vector.

    ``head_value`` defaults to the lowest non-corner level of each head vertex.
    """
    b = p.model.block(head)
    if head_value is None:
        head_value = {v: p.model.space.reduced(v)[0] for v in b.head}
    return p.value(b.head, head_value, tail_value)


def covering_set(g: Cadmg, s: IntrinsicStructure, outcome: Iterable[str],
                 treated: Iterable[str]) -> frozenset[str]:
    """Smallest intrinsic set containing ``outcome`` whose outside parents are all treated."""
    y = g.mask(outcome)
    t = g.mask(treated)
    if y & t:
        raise GraphError("outcome and treated sets overlap")
    for h in s.heads:
        si = h.intrinsic
        if y & ~si == 0 and si & t == 0 and g.pa(si) & ~si & ~(t | g.fixed_mask) == 0:
            return g.names(si)
    raise GraphError(
        f"P({sorted(g.names(y))} | do({sorted(g.names(t))})) is not covered by an intrinsic set; "
        "only effects identified by a single intrinsic kernel are supported")


def do_margin(g: Cadmg, k: Kernel, outcome: Iterable[str], treated: Iterable[str],
              structure: IntrinsicStructure | None = None) -> Kernel:
    r"""Interventional kernel ``P(X_Y | do(X_T0))`` for the supported pattern.

    The outcome must lie in an intrinsic set ``S`` disjoint from the
    treated set whose remaining parents are all treated; the result sums
    the kernel of ``S`` over ``S \ Y``.  Treated vertices outside the
    tail of ``S`` do not affect it and are broadcast.
    """
    s = structure if structure is not None else intrinsic_structure(g)
    outcome = list(outcome)
    treated = list(treated)
    cover = covering_set(g, s, outcome, treated)
    f_s = reach_kernel(g, k, cover)
    m = marginal(f_s, outcome)
    fixed = g.ordered(g.mask(treated) | (g.mask(m.fixed) & g.fixed_mask))
    levels = k.levels
    scope = m.scope
    arr = m.table
    for v in fixed:
        if v not in scope:
            arr = np.repeat(arr[None], levels[v], axis=0)
            scope = (v,) + scope
    out = Kernel(m.random, tuple(v for v in scope if v not in m.random), arr)
    return out.relabel(fixed, g.ordered(g.mask(outcome)))


CSV_COLUMNS = ("head", "head_value", "tail_assignment", "value", "arbitrary_flag")


def _assign(a: Mapping[str, int], order: Sequence[str]) -> str:
    return ",".join(f"{v}={a[v]}" for v in order)


def params_to_csv(p: NestedParams) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for (b, hv, tv), q in zip(p.model.labels(), p.theta):
        flag = (frozenset(b.head), tuple(sorted(tv.items()))) in p.arbitrary
        w.writerow([",".join(b.head), _assign(hv, b.head), _assign(tv, b.tail),
                    f"{q:.12g}", int(flag)])
    return buf.getvalue()


def params_from_csv(model: NestedModel, text: str) -> NestedParams:
    theta = np.full(model.n_params, np.nan)
    arbitrary = set()
    rows = csv.DictReader(io.StringIO(text))
    if tuple(rows.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"parameter file must have columns {','.join(CSV_COLUMNS)}")

    def parse(s):
        out = {}
        for item in filter(None, s.split(",")):
            v, _, x = item.partition("=")
            out[v] = int(x)
        return out

    for row in rows:
        head = row["head"].split(",")
        tv = parse(row["tail_assignment"])
        theta[model.index(head, parse(row["head_value"]), tv)] = float(row["value"])
        if int(row["arbitrary_flag"]):
            arbitrary.add((frozenset(head), tuple(sorted(tv.items()))))
    if np.isnan(theta).any():
        raise ValueError(f"parameter file is missing {int(np.isnan(theta).sum())} values")
    return NestedParams(model, theta, frozenset(arbitrary))
