"""Command-line front end.

Graphs, latent DAGs and datasets are read from files, or by name with
``builtin:<name>``.  Every verb accepts ``--json``; JSON reports write all
numbers as decimal strings with 12 significant digits.

Exit status: 0 success, 1 usage or parse error, 2 failed precondition,
3 optimizer did not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from typing import Mapping, Sequence

import numpy as np

from .cadmg import GraphError, format_graph, intrinsic_structure, read_graph
from .data import dataset
from .fit import ContingencyTable, FitConfig, FitError, FitResult, do_functional, fit, lr_test, standard_errors
from .graphs import LATENT_SOURCES, SOURCES
from .kernel import Kernel, KernelError, marginal
from .param import NestedModel, StateSpace, dimension, from_distribution, params_to_csv
from .verify import (check_recursive_factorization, jacobian_rank, read_latent_dag,
                     sample_distribution, verma_constraint_gap)

SEED_ENV = "NESTED_MARKOV_SEED"
BUILTIN = "builtin:"

EXIT_OK, EXIT_USAGE, EXIT_PRECONDITION, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class PreconditionError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def num(x) -> str:
    return f"{float(x):.12g}"


def _set(names) -> list[str]:
    return sorted(names)


def _fmt_set(names) -> str:
    return "{" + ",".join(_set(names)) + "}"


def _read_text(path: str, table: Mapping[str, str], kind: str) -> str:
    if path.startswith(BUILTIN):
        name = path[len(BUILTIN):]
        if name not in table:
            raise UsageError(f"no builtin {kind} {name!r}; choose from {', '.join(sorted(table))}")
        return table[name]
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None


def load_graph(path: str):
    try:
        return read_graph(_read_text(path, SOURCES, "graph"))
    except GraphError as e:
        raise UsageError(f"{path}: {e}") from None


def load_data(path: str) -> ContingencyTable:
    if path.startswith(BUILTIN):
        try:
            return dataset(path[len(BUILTIN):])
        except KeyError as e:
            raise UsageError(e.args[0]) from None
    try:
        return ContingencyTable.from_csv(_read_text(path, {}, "dataset"))
    except FitError as e:
        raise UsageError(f"{path}: {e}") from None


def read_distribution(text: str) -> Kernel:
    """Joint table from ``var1,...,varK,probability`` rows (a ``count`` column is normalized)."""
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader, [])]
    if not header or header[-1] not in ("probability", "count"):
        raise UsageError("last column of a distribution file must be 'probability' or 'count'")
    names = header[:-1]
    rows = []
    for lineno, row in enumerate(reader, 2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            rows.append(([int(c) for c in row[:-1]], float(row[-1])))
        except ValueError:
            raise UsageError(f"line {lineno}: non-numeric field") from None
        if len(row) != len(header):
            raise UsageError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
    shape = [max(max((r[0][i] for r in rows), default=0) + 1, 2) for i in range(len(names))]
    table = np.zeros(shape)
    for vals, p in rows:
        table[tuple(vals)] += p
    total = table.sum()
    if header[-1] == "count" or abs(total - 1) > 1e-9:
        if header[-1] == "probability":
            raise UsageError(f"probabilities sum to {total:.12g}, not 1")
        table = table / total
    return Kernel(tuple(names), (), table)


def write_distribution(k: Kernel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(k.random) + ["probability"])
    for idx in np.ndindex(*k.table.shape):
        w.writerow(list(idx) + [repr(float(k.table[idx]))])
    return buf.getvalue()


def parse_assignments(items: Sequence[str], what: str) -> dict[str, int]:
    out = {}
    for item in items:
        for part in filter(None, item.split(",")):
            v, sep, x = part.partition("=")
            try:
                if not sep or not v.strip():
                    raise ValueError
                out[v.strip()] = int(x)
            except ValueError:
                raise UsageError(f"bad {what} {part!r}; expected name=integer") from None
    return out


def parse_effect(text: str) -> tuple[dict[str, int], dict[str, int]]:
    """``"Y=1|X=1"`` -> outcome and treatment assignments."""
    outcome, sep, treated = text.partition("|")
    if not sep:
        raise UsageError(f"bad effect {text!r}; expected e.g. 'Y=1|X=1'")
    return parse_assignments([outcome], "effect"), parse_assignments([treated], "effect")


def _space(random: Sequence[str], levels: Mapping[str, int], corner: Mapping[str, int]) -> StateSpace:
    unknown = (set(levels) | set(corner)) - set(random)
    if unknown:
        raise UsageError(f"unknown vertices {sorted(unknown)}")
    full = {v: levels.get(v, 2) for v in random}
    try:
        return StateSpace(full, dict(corner))
    except ValueError as e:
        raise UsageError(str(e)) from None


def _emit(out, report: dict, text: str, as_json: bool) -> None:
    if as_json:
        out.write(json.dumps(report, indent=2) + "\n")
    else:
        out.write(text)


# ---------------------------------------------------------------- verbs

def cmd_info(args, out) -> int:
    g = load_graph(args.graph)
    sp = _space(g.random + g.fixed, parse_assignments(args.levels, "level"), parse_assignments(args.corner, "corner"))
    s = intrinsic_structure(g)
    model = NestedModel(g, sp, s)
    heads = []
    for b in model.blocks:
        heads.append({"head": _set(b.head), "intrinsic_set": _set(b.intrinsic),
                      "tail": _set(b.tail), "parameters": num(b.size)})
    order = [[_set(a), _set(b)] for a, b in s.order_pairs()]
    dists = [_set(g.names(d)) for d in g.districts_mask()]
    dim = dimension(s, sp)
    report = {"random": list(g.random), "fixed": list(g.fixed), "districts": dists,
              "heads": heads, "head_order": order, "dimension": num(dim)}
    lines = [f"random: {' '.join(g.random)}"]
    if g.fixed:
        lines.append(f"fixed: {' '.join(g.fixed)}")
    lines.append("districts: " + " ".join(_fmt_set(d) for d in dists))
    lines.append(f"intrinsic sets: {len(heads)}")
    for h in heads:
        lines.append(f"  head {_fmt_set(h['head'])}  set {_fmt_set(h['intrinsic_set'])}  "
                     f"tail {_fmt_set(h['tail'])}  parameters {h['parameters']}")
    lines.append("head order (earlier < later):")
    lines.extend(f"  {_fmt_set(a)} < {_fmt_set(b)}" for a, b in order)
    if not order:
        lines.append("  (none)")
    lines.append(f"dimension: {dim}")
    _emit(out, report, "\n".join(lines) + "\n", args.json)
    return EXIT_OK


def _fit_report(fr: FitResult) -> tuple[dict, list[str]]:
    est = []
    se = np.sqrt(np.maximum(np.diag(fr.covariance), 0)) if fr.covariance is not None else None
    for j, (b, hv, tv) in enumerate(fr.model.labels()):
        est.append({"head": _set(b.head), "head_value": {v: num(hv[v]) for v in b.head},
                    "tail_value": {v: num(tv[v]) for v in b.tail}, "estimate": num(fr.theta[j]),
                    "se": num(se[j]) if se is not None else None})
    report = {"loglik": num(fr.loglik), "saturated_loglik": num(fr.saturated_loglik),
              "deviance": num(fr.deviance), "df": num(fr.df), "p_value": num(fr.p_value),
              "n": num(fr.n), "dimension": num(fr.model.n_params), "converged": fr.converged,
              "restarts": num(fr.restarts_used), "estimates": est}
    lines = ["head            head value   tail value       estimate          se"]
    for e in est:
        hv = ",".join(f"{k}={v}" for k, v in e["head_value"].items())
        tv = ",".join(f"{k}={v}" for k, v in e["tail_value"].items()) or "-"
        lines.append(f"{_fmt_set(e['head']):<15} {hv:<12} {tv:<16} {e['estimate']:>14} "
                     f"{e['se'] if e['se'] is not None else 'n/a':>11}")
    lines += [f"log-likelihood: {report['loglik']}", f"deviance: {report['deviance']}",
              f"df: {report['df']}", f"p-value: {report['p_value']}"]
    if not fr.converged:
        lines.append("warning: optimizer did not converge")
    return report, lines


def _config(args) -> FitConfig:
    return FitConfig(seed=args.seed, restarts=args.restarts, tol=args.tol)


def cmd_fit(args, out) -> int:
    g = load_graph(args.graph)
    data = load_data(args.data)
    if set(data.variables) != set(g.random):
        raise PreconditionError(f"data variables {sorted(data.variables)} do not match graph {sorted(g.random)}")
    sp = _space(g.random, data.levels, parse_assignments(args.corner, "corner"))
    fr = fit(g, sp, data, _config(args))
    report, lines = _fit_report(fr)
    effects = []
    for text in args.effect:
        outcome, treated = parse_effect(text)
        try:
            f = do_functional(fr.model, outcome, treated)
        except GraphError as e:
            raise PreconditionError(str(e)) from None
        val, se = standard_errors(fr, f)
        effects.append({"effect": text, "probability": num(val[0]), "se": num(se[0])})
        lines.append(f"P({text.replace('|', ' | do(')})) = {num(val[0])} (se {num(se[0])})")
    report["effects"] = effects
    _emit(out, report, "\n".join(lines) + "\n", args.json)
    return EXIT_OK if fr.converged else EXIT_NOT_CONVERGED


def cmd_test(args, out) -> int:
    null = load_graph(args.null)
    alt = load_graph(args.alt)
    data = load_data(args.data)
    try:
        t = lr_test(null, alt, data, cfg=_config(args))
    except GraphError as e:
        raise PreconditionError(str(e)) from None
    report = {"statistic": num(t.statistic), "df": num(t.df), "p_value": num(t.p_value),
              "null_deviance": num(t.null.deviance), "alt_deviance": num(t.alt.deviance),
              "converged": t.null.converged and t.alt.converged}
    text = (f"likelihood ratio statistic: {report['statistic']}\ndf: {report['df']}\n"
            f"p-value: {report['p_value']}\n")
    _emit(out, report, text, args.json)
    return EXIT_OK if report["converged"] else EXIT_NOT_CONVERGED


def _load_distribution(path: str) -> Kernel:
    return read_distribution(_read_text(path, {}, "distribution"))


def cmd_params(args, out) -> int:
    g = load_graph(args.graph)
    k = _load_distribution(args.dist)
    if set(k.random) != set(g.random) or g.fixed:
        raise PreconditionError("distribution variables do not match the graph")
    sp = _space(g.random, k.levels, parse_assignments(args.corner, "corner"))
    p = from_distribution(g, None, sp, k)
    if args.json:
        rows = [{"head": _set(b.head), "head_value": {v: num(hv[v]) for v in b.head},
                 "tail_value": {v: num(tv[v]) for v in b.tail}, "value": num(q)}
                for (b, hv, tv), q in zip(p.model.labels(), p.theta)]
        out.write(json.dumps({"parameters": rows}, indent=2) + "\n")
    else:
        out.write(params_to_csv(p))
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    try:
        d = read_latent_dag(_read_text(args.dag, LATENT_SOURCES, "latent DAG"),
                            parse_assignments(args.levels, "level"))
    except GraphError as e:
        raise UsageError(f"{args.dag}: {e}") from None
    full = sample_distribution(d, args.seed)
    k = marginal(full, d.observed)
    if args.exact:
        out.write(write_distribution(k))
        return EXIT_OK
    if args.n is None or args.n < 1:
        raise UsageError("simulate needs --exact or a positive --n")
    rng = np.random.default_rng([args.seed, 1])
    counts = rng.multinomial(args.n, k.table.reshape(-1)).reshape(k.table.shape)
    out.write(ContingencyTable(k.random, counts).to_csv())
    return EXIT_OK


def cmd_verify(args, out) -> int:
    g = load_graph(args.graph)
    k = _load_distribution(args.dist)
    if set(k.random) != set(g.random) or g.fixed:
        raise PreconditionError("distribution variables do not match the graph")
    if not k.is_positive():
        raise PreconditionError("distribution has zero cells; membership is only checked for positive tables")
    k = k.relabel((), g.random)
    chk = check_recursive_factorization(g, k, args.tol)
    report = {"factorization": "pass" if chk.passed else "fail",
              "max_discrepancy": num(chk.max_discrepancy), "tolerance": num(args.tol)}
    lines = [f"recursive factorization: {report['factorization']} "
             f"(max discrepancy {report['max_discrepancy']}, tolerance {report['tolerance']})"]
    if not chk.passed:
        report["witness"] = _set(chk.witness)
        report["reason"] = chk.reason
        lines.append(f"  witness {_fmt_set(chk.witness)}: {chk.reason}")
    if set(g.random) == {"X", "E", "M", "Y"} and all(v == 2 for v in k.levels.values()):
        gap = verma_constraint_gap(k)
        report["verma_gap"] = num(gap)
        lines.append(f"verma constraint gap: {num(gap)}")
    sp = StateSpace(k.levels)
    model = NestedModel(g, sp)
    point = from_distribution(g, model.structure, sp, k, model=model)
    theta = point.theta if point.feasible else model.uniform_theta()
    rank = jacobian_rank(model, theta)
    report["jacobian_rank"] = num(rank)
    report["dimension"] = num(model.n_params)
    lines.append(f"jacobian rank: {rank} (dimension {model.n_params})")
    _emit(out, report, "\n".join(lines) + "\n", args.json)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def build_parser(seed: int) -> argparse.ArgumentParser:
    p = _Parser(prog="nested-markov", description="Discrete nested Markov models for mixed graphs.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--json", action="store_true", help="machine-readable report")

    def fitting(sp):
        sp.add_argument("--seed", type=int, default=seed, help=f"random seed (default ${SEED_ENV} or 0)")
        sp.add_argument("--restarts", type=int, default=5)
        sp.add_argument("--tol", type=float, default=1e-9, help="relative log-likelihood change")

    s = sub.add_parser("info", help="districts, intrinsic sets, heads, tails, dimension")
    s.add_argument("graph")
    s.add_argument("--levels", action="append", default=[], metavar="V=K")
    s.add_argument("--corner", action="append", default=[], metavar="V=K")
    common(s)
    s.set_defaults(func=cmd_info)

    s = sub.add_parser("fit", help="maximum-likelihood fit to count data")
    s.add_argument("graph")
    s.add_argument("data")
    fitting(s)
    s.add_argument("--corner", action="append", default=[], metavar="V=K")
    s.add_argument("--effect", "--effects", action="append", default=[], metavar="Y=y|X=x",
                   help="report P(Y=y | do(X=x)) with a delta-method standard error")
    common(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("test", help="likelihood-ratio test of nested graphs")
    s.add_argument("null")
    s.add_argument("alt")
    s.add_argument("data")
    fitting(s)
    common(s)
    s.set_defaults(func=cmd_test)

    s = sub.add_parser("params", help="head parameters of an exact distribution")
    s.add_argument("graph")
    s.add_argument("dist")
    s.add_argument("--corner", action="append", default=[], metavar="V=K")
    common(s)
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("simulate", help="distribution or counts from a latent DAG")
    s.add_argument("dag")
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--levels", action="append", default=[], metavar="V=K")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--exact", action="store_true", help="write the observed margin")
    g.add_argument("--n", type=int, help="write multinomial counts of this size")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="check a distribution against a graph")
    s.add_argument("graph")
    s.add_argument("dist")
    s.add_argument("--tol", type=float, default=1e-9)
    common(s)
    s.set_defaults(func=cmd_verify)

    sub.add_parser("graphs", help="list builtin graphs").set_defaults(func=cmd_graphs)
    return p


def cmd_graphs(args, out) -> int:
    for name in sorted(SOURCES):
        out.write(f"builtin:{name}\n")
        out.write("".join(f"    {line}\n" for line in format_graph(read_graph(SOURCES[name])).splitlines()))
    for name in sorted(LATENT_SOURCES):
        out.write(f"builtin:{name} (latent DAG)\n")
    return EXIT_OK


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser(default_seed()).parse_args(argv)
        return args.func(args, out)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (PreconditionError, FitError, KernelError, GraphError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
