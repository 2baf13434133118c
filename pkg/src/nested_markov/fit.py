"""Maximum-likelihood fitting, deviance tests and standard errors.

The likelihood is maximized directly over the head parameters.  They are
variation dependent, so the optimizer keeps every induced cell strictly
positive: a quasi-Newton ascent on the log-likelihood plus a logarithmic
barrier on the cell probabilities, with the barrier weight shrunk
geometrically towards zero.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special

from .cadmg import Cadmg, GraphError, intrinsic_structure
from .kernel import Kernel, joint
from .param import NestedModel, NestedParams, StateSpace, dimension, do_margin, from_distribution

log = logging.getLogger(__name__)


class FitError(ValueError):
    pass


def chi_square_survival(x: float, df: int) -> float:
    """Upper tail ``P(chi2_df > x)`` via the regularized upper incomplete gamma function."""
    if df < 1:
        raise ValueError("degrees of freedom must be at least 1")
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


@dataclass
class ContingencyTable:
    """Counts for every joint configuration of ``variables``.

    ``counts`` has one axis per variable, in order.
    """

    variables: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        self.variables = tuple(self.variables)
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.ndim != len(self.variables):
            raise FitError(f"{self.counts.ndim}-axis table for {len(self.variables)} variables")
        if (self.counts < 0).any():
            raise FitError("counts must be nonnegative")

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def levels(self) -> dict[str, int]:
        return dict(zip(self.variables, self.counts.shape))

    def aligned(self, order: Sequence[str]) -> np.ndarray:
        if sorted(order) != sorted(self.variables):
            raise FitError(f"data variables {sorted(self.variables)} do not match {sorted(order)}")
        return np.transpose(self.counts, [self.variables.index(v) for v in order])

    @classmethod
    def from_csv(cls, text: str, levels: Mapping[str, int] | None = None) -> "ContingencyTable":
        """Read ``var1,...,varK,count`` rows; absent cells count as zero.

        Level counts come from ``levels`` when given, otherwise from the
        largest value seen for each variable (at least two).
        """
        reader = csv.reader(io.StringIO(text))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FitError("empty data file") from None
        if not header or header[-1] != "count":
            raise FitError("last column of the data header must be 'count'")
        names = header[:-1]
        if len(set(names)) != len(names):
            raise FitError("duplicate variable in data header")
        if levels is not None:
            unknown = set(names) - set(levels)
            if unknown:
                raise FitError(f"unknown variables in data: {sorted(unknown)}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FitError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [int(c) for c in row[:-1]]
                n = float(row[-1])
            except ValueError:
                raise FitError(f"line {lineno}: non-numeric field") from None
            rows.append((vals, n))
        shape = []
        for i, v in enumerate(names):
            seen = max((r[0][i] for r in rows), default=0) + 1
            n = levels[v] if levels is not None else max(seen, 2)
            if seen > n:
                raise FitError(f"value {seen - 1} out of range for {v} with {n} levels")
            shape.append(n)
        counts = np.zeros(shape)
        for vals, n in rows:
            if min(vals, default=0) < 0:
                raise FitError("negative level value in data")
            counts[tuple(vals)] += n
        return cls(tuple(names), counts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.variables) + ["count"])
        for idx in np.ndindex(*self.counts.shape):
            c = self.counts[idx]
            w.writerow(list(idx) + [int(c) if float(c).is_integer() else repr(float(c))])
        return buf.getvalue()


@dataclass
class FitConfig:
    seed: int = 0
    restarts: int = 5
    tol: float = 1e-9
    barrier_start: float = 1e-2
    barrier_end: float = 1e-8
    barrier_factor: float = 0.1
    max_iter: int = 1000
    jitter: float = 0.1


@dataclass
class FitResult:
    params: NestedParams
    loglik: float
    deviance: float
    df: int
    p_value: float
    covariance: np.ndarray | None
    converged: bool
    restarts_used: int
    saturated_loglik: float
    n: float
    restart_logliks: list[float] = field(default_factory=list)

    @property
    def model(self) -> NestedModel:
        return self.params.model

    @property
    def theta(self) -> np.ndarray:
        return self.params.theta

    def fitted(self) -> Kernel:
        return self.model.kernel(self.theta)


def multinomial_loglik(model: NestedModel, counts: np.ndarray, theta) -> tuple[float, np.ndarray]:
    """Log-likelihood and its exact gradient; ``-inf`` if a count sits on a nonpositive cell."""
    p = model.probabilities(theta)
    pos = counts > 0
    if (p[pos] <= 0).any():
        return -np.inf, np.full(model.n_params, np.nan)
    ll = float(np.sum(counts[pos] * np.log(p[pos])))
    w = np.zeros_like(p)
    w[pos] = counts[pos] / p[pos]
    return ll, model.jacobian(theta).T @ w


def saturated_loglik(counts: np.ndarray) -> float:
    n = counts.sum()
    pos = counts > 0
    return float(np.sum(counts[pos] * np.log(counts[pos] / n)))


def _bfgs_max(fg: Callable, x0: np.ndarray, feasible: Callable, tol: float,
              max_iter: int, gtol: float = 1e-7) -> tuple[np.ndarray, float, bool]:
    """Maximize ``f`` by BFGS with backtracking that never leaves the feasible set.

    Stops once the relative change of ``f`` drops below ``tol`` with the
    gradient below ``gtol``.
    """
    x = x0.copy()
    f, g = fg(x)
    n = len(x)
    hinv = np.eye(n)
    for it in range(max_iter):
        d = hinv @ g
        slope = g @ d
        if slope <= 0:
            hinv = np.eye(n)
            d = g.copy()
            slope = g @ d
        t = 1.0
        while True:
            xn = x + t * d
            if feasible(xn):
                fn, gn = fg(xn)
                if np.isfinite(fn) and fn >= f + 1e-4 * t * slope:
                    break
            t *= 0.5
            if t < 1e-14:
                return x, f, bool(np.abs(g).max() < 1e-5 * max(1.0, abs(f)))
        # curvature pair for the minimization of -f
        s, y = xn - x, g - gn
        sy = s @ y
        if sy > 1e-16:
            if it == 0:
                hinv = np.eye(n) * sy / (y @ y)
            rho = 1.0 / sy
            left = np.eye(n) - rho * np.outer(s, y)
            hinv = left @ hinv @ left.T + rho * np.outer(s, s)
        change = abs(fn - f)
        x, f, g = xn, fn, gn
        if change <= tol * max(abs(f), 1e-300) and np.abs(g).max() <= gtol:
            return x, f, True
    return x, f, False


def _feasible_towards(model: NestedModel, theta: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Move ``theta`` towards ``anchor`` by halving until every cell is positive."""
    t = 1.0
    while t > 1e-12:
        cand = anchor + t * (theta - anchor)
        if (model.probabilities(cand) > 0).all():
            return cand
        t *= 0.5
    return anchor.copy()


def initial_theta(model: NestedModel, counts: np.ndarray) -> np.ndarray:
    """Parameters recovered from the half-count-smoothed empirical table."""
    n = counts.sum()
    smoothed = (counts + 0.5) / (n + counts.size / 2.0)
    k = Kernel(model.random, (), smoothed.reshape(model.shape))
    theta = from_distribution(model.graph, model.structure, model.space, k, model=model).theta
    return _feasible_towards(model, theta, model.uniform_theta())


def _optimize(model: NestedModel, counts: np.ndarray, theta0: np.ndarray,
              cfg: FitConfig) -> tuple[np.ndarray, bool]:
    n = counts.sum()

    def feasible(th):
        return bool((model.probabilities(th) > 0).all())

    theta = theta0
    mu = cfg.barrier_start
    converged = False
    while True:
        def fg(th, mu=mu):
            p = model.probabilities(th)
            if (p <= 0).any():
                return -np.inf, np.full(model.n_params, np.nan)
            w = counts / (n * p) + mu / p
            f = float(np.sum(counts[counts > 0] * np.log(p[counts > 0])) / n + mu * np.sum(np.log(p)))
            return f, model.jacobian(th).T @ w

        theta, _, converged = _bfgs_max(fg, theta, feasible, cfg.tol, cfg.max_iter)
        if mu <= cfg.barrier_end * (1 + 1e-9):
            break
        mu = max(mu * cfg.barrier_factor, cfg.barrier_end)
    return theta, converged


def observed_information(model: NestedModel, counts: np.ndarray, theta: np.ndarray,
                         step: float = 1e-5) -> np.ndarray:
    """Negative Hessian of the log-likelihood by central differences of the exact gradient."""
    k = model.n_params
    info = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = step
        _, gp = multinomial_loglik(model, counts, theta + e)
        _, gm = multinomial_loglik(model, counts, theta - e)
        info[:, j] = -(gp - gm) / (2 * step)
    return (info + info.T) / 2


def _covariance(info: np.ndarray) -> np.ndarray | None:
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return None
    cov = np.linalg.inv(info)
    return (cov + cov.T) / 2


def fit(g: Cadmg, sp: StateSpace, data: ContingencyTable, cfg: FitConfig | None = None,
        model: NestedModel | None = None) -> FitResult:
    """Maximum-likelihood fit of the nested model for ``g`` to ``data``."""
    cfg = cfg or FitConfig()
    if g.fixed_mask:
        raise FitError("fitting needs a graph without fixed vertices")
    if set(data.variables) != set(g.random):
        raise FitError(f"data variables {sorted(data.variables)} do not match graph {sorted(g.random)}")
    for v, n in data.levels.items():
        if sp.levels[v] != n:
            raise FitError(f"data has {n} levels for {v}, state space {sp.levels[v]}")
    model = model or NestedModel(g, sp)
    cells = model.n_cells
    if model.n_params > cells - 1:
        raise FitError(f"model dimension {model.n_params} exceeds {cells - 1} free cell probabilities")
    counts = data.aligned(model.random).reshape(-1).astype(float)
    n = counts.sum()
    if n <= 0:
        raise FitError("no observations")

    rng = np.random.default_rng(cfg.seed)
    base = initial_theta(model, counts)
    best = None
    logliks = []
    for r in range(max(cfg.restarts, 1)):
        if r == 0:
            start = base
        else:
            jit = base * rng.uniform(1 - cfg.jitter, 1 + cfg.jitter, size=base.shape)
            start = _feasible_towards(model, jit, base)
        theta, conv = _optimize(model, counts, start, cfg)
        ll, _ = multinomial_loglik(model, counts, theta)
        logliks.append(ll)
        log.debug("restart %d: loglik %.10g converged=%s", r, ll, conv)
        if best is None or ll > best[0]:
            best = (ll, theta, conv)
    ll, theta, conv = best
    sat = saturated_loglik(counts)
    dev = 2.0 * (sat - ll)
    df = (cells - 1) - model.n_params
    pval = chi_square_survival(dev, df) if df >= 1 else (1.0 if dev <= 1e-6 else 0.0)
    cov = _covariance(observed_information(model, counts, theta))
    return FitResult(NestedParams(model, theta), ll, dev, df, pval, cov, conv,
                     max(cfg.restarts, 1), sat, n, logliks)


def is_edge_subgraph(small: Cadmg, big: Cadmg) -> bool:
    return (set(small.random) == set(big.random) and set(small.fixed) == set(big.fixed)
            and small.directed_edges <= big.directed_edges
            and small.bidirected_edges <= big.bidirected_edges)


@dataclass
class LRTest:
    statistic: float
    df: int
    p_value: float
    null: FitResult
    alt: FitResult


def lr_test(g_null: Cadmg, g_alt: Cadmg, data: ContingencyTable, sp: StateSpace | None = None,
            cfg: FitConfig | None = None) -> LRTest:
    """Likelihood-ratio test of the nested model of ``g_null`` inside that of ``g_alt``."""
    if not is_edge_subgraph(g_null, g_alt):
        raise GraphError("null graph is not an edge subgraph of the alternative")
    sp = sp or StateSpace(data.levels)
    fn = fit(g_null, sp, data, cfg)
    fa = fit(g_alt, sp, data, cfg)
    stat = max(fn.deviance - fa.deviance, 0.0)
    df = dimension(intrinsic_structure(g_alt), sp) - dimension(intrinsic_structure(g_null), sp)
    pval = chi_square_survival(stat, df) if df >= 1 else 1.0
    return LRTest(stat, df, pval, fn, fa)


def standard_errors(fr: FitResult, functional: Callable[[np.ndarray], np.ndarray],
                    step: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Value and delta-method standard error of ``functional(theta)``."""
    if fr.covariance is None:
        raise FitError("observed information is singular; standard errors unavailable")
    theta = fr.theta
    value = np.atleast_1d(np.asarray(functional(theta), dtype=float))
    grad = np.empty((value.size, theta.size))
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        up = np.atleast_1d(functional(theta + e))
        down = np.atleast_1d(functional(theta - e))
        grad[:, j] = (up - down) / (2 * step)
    var = np.einsum("ij,jk,ik->i", grad, fr.covariance, grad)
    return value, np.sqrt(np.maximum(var, 0.0))


def do_functional(model: NestedModel, outcome: Mapping[str, int],
                  treated: Mapping[str, int]) -> Callable[[np.ndarray], float]:
    """``theta -> P(outcome | do(treated))`` for effects covered by one intrinsic set."""
    g = model.graph
    ys = list(outcome)
    ts = list(treated)
    do_margin(g, joint(model.random, np.full(model.shape, 1.0 / model.n_cells)), ys, ts,
              structure=model.structure)

    def f(theta):
        k = model.kernel(theta)
        m = do_margin(g, k, ys, ts, structure=model.structure)
        return float(m.table[tuple(treated[v] if v in treated else outcome[v] for v in m.scope)])

    return f
