"""Discrete probability kernels ``p(x_V | x_W)`` as dense numpy tables.

A kernel's table has one axis per fixed vertex followed by one axis per
random vertex, so ``table[x_W + x_V]`` is a probability and summing over
the trailing random axes gives one for every context ``x_W``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .cadmg import Cadmg, GraphError, bits

MAX_CELLS = 2 ** 24


class KernelError(ValueError):
    pass


class ZeroMarginError(KernelError):
    """A conditioning margin vanished where a unique conditional was required."""

    def __init__(self, vertex: str, given: Sequence[str]):
        self.vertex = vertex
        self.given = tuple(given)
        super().__init__(
            f"zero margin when conditioning {vertex} on {list(self.given)}; "
            "the kernel is not strictly positive on this margin"
        )


@dataclass(frozen=True, eq=False)
class Kernel:
    """Kernel for ``random`` given ``fixed``.

    ``undefined`` is set by :func:`condition`: a boolean array over the
    context axes marking contexts whose conditional is an arbitrary
    (uniform) version because the conditioning margin was zero.
    """

    random: tuple[str, ...]
    fixed: tuple[str, ...]
    table: np.ndarray
    undefined: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "random", tuple(self.random))
        object.__setattr__(self, "fixed", tuple(self.fixed))
        table = np.asarray(self.table, dtype=float)
        object.__setattr__(self, "table", table)
        if set(self.random) & set(self.fixed):
            raise KernelError("random and fixed scopes overlap")
        if table.ndim != len(self.random) + len(self.fixed):
            raise KernelError(
                f"table has {table.ndim} axes for {len(self.fixed) + len(self.random)} vertices")
        if table.size > MAX_CELLS:
            raise KernelError(f"table with {table.size} cells exceeds the {MAX_CELLS} cell cap")

    @property
    def scope(self) -> tuple[str, ...]:
        return self.fixed + self.random

    @property
    def levels(self) -> dict[str, int]:
        return dict(zip(self.scope, self.table.shape))

    @property
    def random_axes(self) -> tuple[int, ...]:
        n = len(self.fixed)
        return tuple(range(n, n + len(self.random)))

    def context_sums(self) -> np.ndarray:
        return self.table.sum(axis=self.random_axes) if self.random else np.ones(self.table.shape)

    def is_valid(self, tol: float = 1e-12) -> bool:
        return bool((self.table >= 0).all() and np.allclose(self.context_sums(), 1.0, rtol=0, atol=tol))

    def check(self, tol: float = 1e-9) -> "Kernel":
        """Raise unless entries are nonnegative and each context sums to one."""
        if (self.table < 0).any():
            raise KernelError("kernel has negative entries")
        err = np.abs(self.context_sums() - 1.0).max(initial=0.0)
        if err > tol:
            raise KernelError(f"kernel contexts do not sum to one (max error {err:.3g})")
        return self

    def is_positive(self) -> bool:
        return bool((self.table > 0).all())

    def array(self, order: Sequence[str]) -> np.ndarray:
        """The table with axes permuted to ``order`` (a permutation of the scope)."""
        scope = self.scope
        if sorted(order) != sorted(scope):
            raise KernelError(f"order {list(order)} is not a permutation of {list(scope)}")
        return np.transpose(self.table, [scope.index(v) for v in order])

    def relabel(self, fixed: Sequence[str], random: Sequence[str]) -> "Kernel":
        """Same kernel with scopes listed in a different order."""
        return Kernel(tuple(random), tuple(fixed), self.array(tuple(fixed) + tuple(random)))

    def allclose(self, other: "Kernel", atol: float = 1e-12) -> bool:
        if set(self.random) != set(other.random) or set(self.fixed) != set(other.fixed):
            return False
        return bool(np.allclose(self.table, other.array(self.scope), rtol=0, atol=atol))


def joint(names: Sequence[str], table) -> Kernel:
    """Kernel with no fixed vertices."""
    return Kernel(tuple(names), (), np.asarray(table, dtype=float))


def uniform(levels: dict[str, int], random: Sequence[str], fixed: Sequence[str] = ()) -> Kernel:
    shape = [levels[v] for v in (*fixed, *random)]
    n = int(np.prod([levels[v] for v in random])) if random else 1
    return Kernel(tuple(random), tuple(fixed), np.full(shape, 1.0 / n))


# -- helpers over (scope, array) pairs ---------------------------------------

def _arrange(arr: np.ndarray, scope: Sequence[str], fixed: Sequence[str],
             random: Sequence[str]) -> Kernel:
    """Squeeze singleton axes not in ``fixed + random`` and transpose."""
    target = tuple(fixed) + tuple(random)
    drop = tuple(i for i, v in enumerate(scope) if v not in target)
    arr = arr.squeeze(axis=drop) if drop else arr
    kept = [v for v in scope if v in target]
    arr = np.transpose(arr, [kept.index(v) for v in target])
    return Kernel(tuple(random), tuple(fixed), np.ascontiguousarray(arr))


def _ordered_subset(names: Iterable[str], order: Sequence[str]) -> tuple[str, ...]:
    names = set(names)
    return tuple(v for v in order if v in names)


# -- marginals and conditionals -----------------------------------------------

def marginal(k: Kernel, keep: Iterable[str]) -> Kernel:
    """Sum out the random vertices not in ``keep``."""
    keep = set(keep)
    if not keep <= set(k.random):
        raise KernelError(f"{sorted(keep - set(k.random))} are not random in the kernel")
    axes = tuple(i for i, v in enumerate(k.scope) if v in k.random and v not in keep)
    arr = k.table.sum(axis=axes) if axes else k.table
    random = _ordered_subset(keep, k.random)
    return Kernel(random, k.fixed, arr)


def condition(k: Kernel, given: Iterable[str]) -> Kernel:
    """A version of the conditional kernel of ``V \\ given`` given ``given`` and ``W``.

    Contexts where the conditioning margin is zero get the uniform
    version; they are flagged in ``undefined``.
    """
    given = set(given)
    if not given <= set(k.random):
        raise KernelError(f"{sorted(given - set(k.random))} are not random in the kernel")
    scope = k.scope
    rest = _ordered_subset(set(k.random) - given, k.random)
    axes = tuple(i for i, v in enumerate(scope) if v in rest)
    denom = k.table.sum(axis=axes, keepdims=True)
    zero = denom == 0
    n_rest = int(np.prod([k.levels[v] for v in rest])) if rest else 1
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(zero, 1.0 / n_rest, k.table / np.where(zero, 1.0, denom))
    fixed = k.fixed + _ordered_subset(given, k.random)
    out = _arrange(cond, scope, fixed, rest)
    flags = _arrange(zero.astype(float), scope, fixed, ()).table > 0 if zero.any() else None
    return Kernel(out.random, out.fixed, out.table, undefined=flags)


def reduce_context(k: Kernel, keep_fixed: Iterable[str]) -> tuple[Kernel, float]:
    """Drop fixed vertices a kernel should not depend on.

    Returns the kernel averaged over the dropped context coordinates and
    the largest deviation of the original from that average, which is
    zero exactly when the dropped coordinates are irrelevant.
    """
    keep_fixed = set(keep_fixed)
    if not keep_fixed <= set(k.fixed):
        raise KernelError(f"{sorted(keep_fixed - set(k.fixed))} are not fixed in the kernel")
    axes = tuple(i for i, v in enumerate(k.fixed) if v not in keep_fixed)
    if not axes:
        return k, 0.0
    mean = k.table.mean(axis=axes, keepdims=True)
    gap = float(np.abs(k.table - mean).max())
    fixed = _ordered_subset(keep_fixed, k.fixed)
    return _arrange(mean, k.scope, fixed, k.random), gap


def multiply(*kernels: Kernel) -> Kernel:
    """Product of kernels with disjoint random scopes.

    Vertices random in some factor are random in the product; the rest
    of the combined scope is fixed.
    """
    random: list[str] = []
    for kk in kernels:
        if set(kk.random) & set(random):
            raise KernelError("factors share random vertices")
        random.extend(kk.random)
    fixed: list[str] = []
    for kk in kernels:
        fixed.extend(v for v in kk.fixed if v not in random and v not in fixed)
    scope = tuple(fixed) + tuple(random)
    levels: dict[str, int] = {}
    for kk in kernels:
        for v, n in kk.levels.items():
            if levels.setdefault(v, n) != n:
                raise KernelError(f"inconsistent level counts for {v}")
    out = np.ones([levels[v] for v in scope])
    for kk in kernels:
        arr = kk.array(_ordered_subset(kk.scope, scope))
        shape = [levels[v] if v in kk.scope else 1 for v in scope]
        out = out * arr.reshape(shape)
    return Kernel(tuple(random), tuple(fixed), out)


# -- graph-driven kernels -------------------------------------------------------

def _check_scopes(g: Cadmg, k: Kernel) -> None:
    if set(k.random) != set(g.random) or set(k.fixed) != set(g.fixed):
        raise KernelError(
            f"kernel scope ({sorted(k.random)} | {sorted(k.fixed)}) does not match graph "
            f"({sorted(g.random)} | {sorted(g.fixed)})")


def _resolve_order(g: Cadmg, order: Sequence[str] | None) -> list[str]:
    if order is None:
        return [g.universe[i] for i in g.topological_order()]
    order = list(order)
    if sorted(order) != sorted(g.random):
        raise GraphError("order must list each random vertex exactly once")
    pos = {v: i for i, v in enumerate(order)}
    for b in order:
        for a in g.names(g.parents[g.index(b)] & g.random_mask):
            if pos[a] > pos[b]:
                raise GraphError(f"order is not topological: {a} -> {b} but {b} comes first")
    return order


def _district_factor_full(g: Cadmg, k: Kernel, d: int, order: Sequence[str] | None,
                          strict: bool = True) -> Kernel:
    """g-formula product for ``d`` over the whole scope of ``k``."""
    order = _resolve_order(g, order)
    scope = k.scope
    table = k.table
    pos = {v: i for i, v in enumerate(scope)}
    members = set(g.names(d))
    out = np.ones((1,) * table.ndim)
    # running margin over the prefix of the order, shrinking from the back
    margin = table
    kept = list(order)
    factors = {}
    for v in reversed(order):
        ax = pos[v]
        if v in members:
            denom = margin.sum(axis=ax, keepdims=True)
            zero = denom == 0
            if zero.any():
                if strict:
                    raise ZeroMarginError(v, [u for u in kept if u != v])
                cond = np.where(zero, 1.0 / table.shape[ax], margin / np.where(zero, 1.0, denom))
            else:
                cond = margin / denom
            factors[v] = cond
            margin = denom
        else:
            margin = margin.sum(axis=ax, keepdims=True)
        kept.pop()
    for v in order:
        if v in factors:
            out = out * factors[v]
    out = np.broadcast_to(out, table.shape)
    fixed = tuple(u for u in scope if u not in members)
    return _arrange(np.ascontiguousarray(out), scope, fixed,
                    _ordered_subset(members, k.random))


def district_factor(g: Cadmg, k: Kernel, district: Iterable[str],
                    order: Sequence[str] | None = None, strict: bool = True) -> Kernel:
    """Kernel ``r_D(x_D | x_{pa(D) \\ D})`` given by the g-formula.

    ``k`` is a kernel for ``g``'s random vertices given its fixed ones;
    ``district`` is a district or a union of districts of ``g``.  Each
    vertex of ``D`` contributes ``p(x_v | x_pre(v), x_W)`` for the
    topological ``order`` (the graph's own order by default).  Any
    residual dependence on context outside ``pa(D)`` is averaged out; it
    vanishes for kernels in the model.
    """
    _check_scopes(g, k)
    d = g.mask(district)
    if d & ~g.random_mask:
        raise GraphError("district must consist of random vertices")
    if d == 0 or any(g.district_of(1 << v, g.random_mask) & ~d for v in bits(d)):
        raise GraphError(f"{sorted(g.names(d))} is not a union of districts")
    full = _district_factor_full(g, k, d, order, strict)
    target = _graph_ordered(g, g.pa(d) & ~d)
    reduced, _ = reduce_context(full, target)
    return reduced.relabel(target, _graph_ordered(g, d))


def _graph_ordered(g: Cadmg, mask: int) -> tuple[str, ...]:
    return g.ordered(mask)


def reach_kernel(g: Cadmg, k: Kernel, target: Iterable[str], strict: bool = True) -> Kernel:
    """Kernel for the intrinsic set ``S`` given ``pa(S) \\ S``.

    Replays the intrinsic-closure reductions on the distribution: an
    ancestral margin sums out vertices, a district restriction takes the
    g-formula factor.
    """
    _check_scopes(g, k)
    s = g.mask(target)
    if s & ~g.random_mask or not g.is_bidirected_connected(s):
        raise GraphError(f"{sorted(g.names(s))} is not intrinsic")
    r = g.random_mask
    cur = k
    step_m = True
    unchanged = 0
    while unchanged < 2:
        if step_m:
            nr = g.ancestors_mask(s, r) & r
            if nr != r:
                cur = marginal(cur, g.names(nr))
                cur, _ = reduce_context(cur, g.names(g.pa(nr) & ~nr))
        else:
            nr = g.district_of(s, r)
            if nr != r:
                cur = district_factor(g.sub(r), cur, g.names(nr), strict=strict)
        unchanged = unchanged + 1 if nr == r else 0
        r = nr
        step_m = not step_m
    if r != s:
        raise GraphError(f"{sorted(g.names(s))} is not intrinsic (closure is {sorted(g.names(r))})")
    return cur.relabel(_graph_ordered(g, g.pa(s) & ~s), _graph_ordered(g, s))
