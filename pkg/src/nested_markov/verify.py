"""Independent checks on the parameterization and the fitted models.

Nothing here goes through the head parameters: distributions come from
latent-variable DAGs, model membership is checked by literally replaying
the recursive factorization, and dimension is checked by the numerical
rank of the parameter-to-probability map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cadmg import Cadmg, GraphError, bits, parse_graph
from .kernel import Kernel, KernelError, _district_factor_full, marginal, reduce_context
from .param import NestedModel, NestedParams


@dataclass(frozen=True)
class LatentDag:
    """A DAG over observed and latent vertices with per-vertex level counts."""

    observed: tuple[str, ...]
    latent: tuple[str, ...]
    edges: frozenset[tuple[str, str]]
    levels: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "observed", tuple(self.observed))
        object.__setattr__(self, "latent", tuple(self.latent))
        object.__setattr__(self, "edges", frozenset(self.edges))
        names = self.vertices
        if len(set(names)) != len(names):
            raise GraphError("observed and latent vertices overlap")
        levels = {v: 2 for v in names}
        levels.update(self.levels)
        object.__setattr__(self, "levels", levels)
        for a, b in self.edges:
            if a not in levels or b not in levels:
                raise GraphError(f"edge {a} -> {b} uses an undeclared vertex")
            if a == b:
                raise GraphError(f"self-loop on {a}")
        self.topological_order()

    @property
    def vertices(self) -> tuple[str, ...]:
        return self.observed + self.latent

    def parents(self, v: str) -> list[str]:
        return [a for a in self.vertices if (a, v) in self.edges]

    def children(self, v: str) -> list[str]:
        return [b for b in self.vertices if (v, b) in self.edges]

    def topological_order(self) -> list[str]:
        remaining = list(self.vertices)
        order = []
        while remaining:
            ready = [v for v in remaining if not set(self.parents(v)) & set(remaining)]
            if not ready:
                raise GraphError(f"directed cycle among {sorted(remaining)}")
            order.append(ready[0])
            remaining.remove(ready[0])
        return order


def read_latent_dag(text: str, levels: Mapping[str, int] | None = None) -> LatentDag:
    random, fixed, latent, directed, bidirected = parse_graph(text, allow_latent=True)
    if fixed or bidirected:
        raise GraphError("a latent DAG has no fixed vertices and no bidirected edges")
    return LatentDag(tuple(random), tuple(latent), frozenset(directed), dict(levels or {}))


def sample_distribution(d: LatentDag, seed) -> Kernel:
    """Joint over all vertices with every CPT row drawn from a flat Dirichlet."""
    rng = np.random.default_rng(seed)
    names = d.vertices
    shape = [d.levels[v] for v in names]
    table = np.ones(shape)
    for v in d.topological_order():
        pa = d.parents(v)
        rows = rng.dirichlet(np.ones(d.levels[v]), size=int(np.prod([d.levels[u] for u in pa])))
        cpt = rows.reshape([d.levels[u] for u in pa] + [d.levels[v]])
        # cpt axes follow pa + [v]; move into the joint's axis order
        order = [names.index(u) for u in pa + [v]]
        perm = np.argsort(order)
        cpt = np.transpose(cpt, perm)
        bshape = [d.levels[u] if i in order else 1 for i, u in enumerate(names)]
        table = table * cpt.reshape(bshape)
    return Kernel(names, (), table)


def latent_project(d: LatentDag) -> Cadmg:
    """Project out the latent vertices.

    ``a -> b`` when a directed path joins them through latent vertices
    only; ``a <-> b`` when some latent vertex reaches both along
    latent-only directed paths.
    """
    latent = set(d.latent)

    def reach(src: str) -> set[str]:
        """Observed vertices reachable from ``src`` with latent intermediates."""
        out, stack, seen = set(), list(d.children(src)), set()
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            if v in latent:
                stack.extend(d.children(v))
            else:
                out.add(v)
        return out

    directed = {(a, b) for a in d.observed for b in reach(a)}
    bidirected = set()
    for u in d.latent:
        hit = sorted(reach(u), key=d.observed.index)
        for i, a in enumerate(hit):
            for b in hit[i + 1:]:
                bidirected.add((a, b))
    return Cadmg(d.observed, (), sorted(directed), sorted(bidirected))


@dataclass(frozen=True)
class FactorizationCheck:
    passed: bool
    max_discrepancy: float
    witness: frozenset[str] | None = None
    reason: str = ""

    def __bool__(self):
        return self.passed


class _Violation(Exception):
    def __init__(self, vertices, gap, reason):
        self.vertices, self.gap, self.reason = vertices, gap, reason


def check_recursive_factorization(g: Cadmg, k: Kernel, tol: float = 1e-9) -> FactorizationCheck:
    """Test membership in the nested model by following its recursive definition.

    At every reachable graph: with several districts, each g-formula
    factor must depend only on the parents of its district, and is then
    checked against the district's own graph; for every sterile vertex,
    the margin without it must not depend on fixed vertices that lose
    all their children, and is checked against its graph.  The first
    condition that fails by more than ``tol`` is returned as a witness.
    """
    if set(k.random) != set(g.random) or set(k.fixed) != set(g.fixed):
        raise KernelError("kernel scope does not match the graph")
    if not k.is_positive():
        raise KernelError("membership check needs a strictly positive kernel")
    seen: set[int] = set()
    worst = [0.0]

    def note(gap, r, reason):
        worst[0] = max(worst[0], gap)
        if gap > tol:
            raise _Violation(g.names(r), gap, reason)

    def visit(r: int, kern: Kernel) -> None:
        if r in seen:
            return
        seen.add(r)
        if len(bits(r)) == 1:
            return
        gr = g.sub(r)
        dists = gr.districts_mask()
        if len(dists) >= 2:
            for d in dists:
                full = _district_factor_full(gr, kern, d, None)
                reduced, gap = reduce_context(full, g.names(g.pa(d) & ~d))
                note(gap, d, "district factor depends on vertices outside its parents")
                visit(d, reduced)
        for h in bits(gr.sterile_mask(r)):
            a = r & ~(1 << h)
            m = marginal(kern, g.names(a))
            reduced, gap = reduce_context(m, g.names(g.pa(a) & ~a))
            note(gap, a, "ancestral margin depends on a dropped fixed vertex")
            visit(a, reduced)

    try:
        visit(g.random_mask, k)
    except _Violation as v:
        return FactorizationCheck(False, v.gap, v.vertices, v.reason)
    return FactorizationCheck(True, worst[0])


def verma_constraint_gap(k: Kernel, names: Sequence[str] = ("X", "E", "M", "Y")) -> float:
    """Largest spread over ``x`` of ``sum_e p(e | x) p(y | x, m, e)``."""
    x, e, m, y = names
    if k.fixed or set(k.random) != set(names):
        raise KernelError(f"expected a joint over {list(names)}")
    p = k.array((x, e, m, y))
    p_xe = p.sum(axis=(2, 3))
    e_given_x = p_xe / p_xe.sum(axis=1, keepdims=True)
    p_xem = p.sum(axis=3)
    y_given = p / p_xem[..., None]
    q = np.einsum("ae,aemy->amy", e_given_x, y_given)
    return float((q.max(axis=0) - q.min(axis=0)).max())


def jacobian_rank(model: NestedModel, point: NestedParams | np.ndarray, step: float = 1e-6,
                  rtol: float = 1e-8) -> int:
    """Numerical rank of parameters -> cell probabilities by central differences."""
    theta = point.theta if isinstance(point, NestedParams) else np.asarray(point, dtype=float)
    if not (model.probabilities(theta) > 0).all():
        raise ValueError("jacobian rank needs a strictly feasible parameter point")
    cols = []
    for j in range(model.n_params):
        e = np.zeros_like(theta)
        e[j] = step
        cols.append((model.probabilities(theta + e) - model.probabilities(theta - e)) / (2 * step))
    jac = np.column_stack(cols) if cols else np.zeros((model.n_cells, 0))
    if jac.size == 0:
        return 0
    sv = np.linalg.svd(jac, compute_uv=False)
    return int((sv > rtol * sv.max()).sum())


def perturb(k: Kernel, cell: Iterable[int] | None = None, factor: float = 1.05) -> Kernel:
    """Scale one cell and renormalize each context."""
    table = k.table.copy()
    if cell is None:
        cell = (0,) * table.ndim
    table[tuple(cell)] *= factor
    table = table / table.sum(axis=k.random_axes, keepdims=True)
    return Kernel(k.random, k.fixed, table)
