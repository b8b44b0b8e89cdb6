"""Bottom-up evaluation of full TGDs with stratified negation and aggregation.

A model is a plain ``dict`` mapping predicate names to sets of value tuples.
"""
from __future__ import annotations

import math
import operator
from collections import defaultdict
from typing import Callable, Iterable, Iterator, Mapping

from .logic import (
    AggregateRule,
    AggregateTerm,
    Arithmetic,
    Atom,
    Comparison,
    Constant,
    NegatedExists,
    Negation,
    Overlay,
    Rule,
    Variable,
    expression_variables,
)
from .validation import _sccs, dependency_edges, stratify

Model = dict


class EvaluationError(Exception):
    pass


class UnboundVariable(EvaluationError):
    pass


class TypeMismatch(EvaluationError):
    pass


_COMPARE: dict[str, Callable] = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}
_ARITH: dict[str, Callable] = {
    "+": operator.add,
    "-": operator.sub,
    "*": operator.mul,
    "/": operator.truediv,
}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def eval_term(expr, binding: Mapping):
    if isinstance(expr, Constant):
        return expr.value
    if isinstance(expr, Variable):
        try:
            return binding[expr]
        except KeyError:
            raise UnboundVariable(f"variable {expr} is not bound") from None
    if isinstance(expr, Arithmetic):
        left = eval_term(expr.left, binding)
        right = eval_term(expr.right, binding)
        if not (_is_number(left) and _is_number(right)):
            raise TypeMismatch(f"arithmetic on non-numbers: {left!r} {expr.op} {right!r}")
        return _ARITH[expr.op](left, right)
    raise EvaluationError(f"cannot evaluate {expr!r}")


def eval_builtin(literal: Comparison, binding: Mapping) -> bool:
    left = eval_term(literal.left, binding)
    right = eval_term(literal.right, binding)
    if literal.op in ("==", "!="):
        if _is_number(left) != _is_number(right):
            return literal.op == "!="
        return _COMPARE[literal.op](left, right)
    if _is_number(left) and _is_number(right):
        return _COMPARE[literal.op](left, right)
    if isinstance(left, str) and isinstance(right, str):
        return _COMPARE[literal.op](left, right)
    raise TypeMismatch(f"cannot compare {left!r} {literal.op} {right!r}")


# -- body matching ---------------------------------------------------------


class _Indexes:
    """Lazily built hash indexes over the relations of one model snapshot."""

    def __init__(self, relations: Mapping):
        self.relations = relations
        self._cache: dict = {}

    def lookup(self, pred: str, positions: tuple, key: tuple):
        rel = self.relations.get(pred, ())
        if not positions:
            return rel
        ck = (pred, positions)
        index = self._cache.get(ck)
        if index is None:
            index = defaultdict(list)
            for row in rel:
                index[tuple(row[p] for p in positions)].append(row)
            self._cache[ck] = index
        return index.get(key, ())


def _order_body(body: tuple, bound: set) -> list:
    """Greedy order: positive atoms by boundness, filters as soon as ready."""
    atoms = [lit for lit in body if isinstance(lit, Atom)]
    filters = [lit for lit in body if not isinstance(lit, Atom)]
    bound = set(bound)
    plan: list = []

    def flush():
        progress = True
        while progress:
            progress = False
            for f in list(filters):
                if isinstance(f, Comparison) and f.op == "==":
                    for a, b in ((f.left, f.right), (f.right, f.left)):
                        if isinstance(a, Variable) and a not in bound and expression_variables(b) <= bound:
                            plan.append(("assign", a, b))
                            bound.add(a)
                            filters.remove(f)
                            progress = True
                            break
                    if f not in filters:
                        continue
                if f.variables() <= bound:
                    plan.append(("filter", f))
                    filters.remove(f)
                    progress = True

    flush()
    while atoms:
        best = max(
            range(len(atoms)),
            key=lambda i: (
                sum(1 for a in atoms[i].args if not isinstance(a, Variable) or a in bound),
                -i,
            ),
        )
        atom = atoms.pop(best)
        plan.append(("atom", atom))
        bound |= atom.variables()
        flush()
    if filters:
        names = sorted({v.name for f in filters for v in f.variables() - bound})
        raise UnboundVariable(f"variables {', '.join(names)} are not bound by a positive atom")
    return plan


def _match(plan, sources, binding, negative_source):
    """Depth-first join over ``plan``. ``sources(atom)`` gives an _Indexes."""
    if not plan:
        yield binding
        return
    step = plan[0]
    rest = plan[1:]
    kind = step[0]
    if kind == "atom":
        atom = step[1]
        positions = []
        key = []
        for i, t in enumerate(atom.args):
            if isinstance(t, Constant):
                positions.append(i)
                key.append(t.value)
            elif isinstance(t, Variable) and t in binding:
                positions.append(i)
                key.append(binding[t])
        index = sources(atom)
        for row in index.lookup(atom.predicate, tuple(positions), tuple(key)):
            if len(row) != len(atom.args):
                continue
            new = binding
            ok = True
            for t, v in zip(atom.args, row):
                if isinstance(t, Variable):
                    if t in new:
                        if new[t] != v:
                            ok = False
                            break
                    else:
                        if new is binding:
                            new = dict(binding)
                        new[t] = v
            if ok:
                yield from _match(rest, sources, new, negative_source)
    elif kind == "assign":
        _, var, expr = step
        new = dict(binding)
        new[var] = eval_term(expr, binding)
        yield from _match(rest, sources, new, negative_source)
    else:
        lit = step[1]
        if _holds(lit, binding, negative_source):
            yield from _match(rest, sources, binding, negative_source)


def _holds(lit, binding, model_index: _Indexes) -> bool:
    if isinstance(lit, Comparison):
        return eval_builtin(lit, binding)
    if isinstance(lit, Negation):
        atom = lit.atom
        row = tuple(eval_term(t, binding) for t in atom.args)
        return row not in model_index.relations.get(atom.predicate, ())
    if isinstance(lit, NegatedExists):
        inner_plan = _order_body(lit.body, set(binding))
        for _ in _match(inner_plan, lambda a: model_index, binding, model_index):
            return False
        return True
    raise EvaluationError(f"unsupported literal {lit!r}")


def match_body(body: tuple, model: Mapping, binding: Mapping | None = None) -> Iterator[dict]:
    """All bindings of ``body`` against ``model`` (homomorphism matching)."""
    binding = dict(binding or {})
    idx = _Indexes(model)
    plan = _order_body(tuple(body), set(binding))
    return _match(plan, lambda a: idx, binding, idx)


def instantiate(atom: Atom, binding: Mapping) -> tuple:
    return tuple(eval_term(t, binding) for t in atom.args)


# -- aggregation -----------------------------------------------------------


def percentile(values: Iterable, q: float) -> float:
    """Linear-interpolation percentile (rank = q/100 * (n-1))."""
    data = sorted(float(v) for v in values)
    if not data:
        raise ValueError("percentile of an empty collection")
    rank = (q / 100.0) * (len(data) - 1)
    lo = math.floor(rank)
    hi = min(lo + 1, len(data) - 1)
    frac = rank - lo
    return data[lo] + (data[hi] - data[lo]) * frac


def _check_numbers(name, values):
    for v in values:
        if not _is_number(v):
            raise TypeMismatch(f"{name} over non-numeric value {v!r}")


def _apply_aggregate(term: AggregateTerm, solutions: list[dict]):
    fn = term.function
    args = term.args
    if fn == "count":
        # multiset semantics: one entry per distinct body solution
        return len(solutions)
    if fn == "create_region_overlay":
        rows = {tuple(eval_term(a, s) for a in args) for s in solutions}
        return Overlay(tuple(sorted(rows, key=sort_key)))
    values = [eval_term(args[0], s) for s in solutions]
    if fn == "max":
        return max(values, key=sort_key)
    if fn == "min":
        return min(values, key=sort_key)
    _check_numbers(fn, values)
    if fn == "sum":
        return math.fsum(float(v) for v in values)
    if fn == "mean":
        return math.fsum(float(v) for v in values) / len(values)
    if fn == "compute_percentile":
        q = eval_term(args[1], {})
        return percentile(values, float(q))
    raise EvaluationError(f"unknown aggregation function {fn}")


def eval_aggregate_rule(rule: AggregateRule, model: Mapping) -> set:
    """Evaluate one aggregation rule; empty body solutions give no rows."""
    body_vars = sorted({v for lit in rule.body for v in lit.variables()}, key=lambda v: v.name)
    distinct: dict[tuple, dict] = {}
    for binding in match_body(rule.body, model):
        key = tuple(binding.get(v) for v in body_vars)
        distinct.setdefault(key, binding)
    group_positions = [i for i, t in enumerate(rule.head.args) if not isinstance(t, AggregateTerm)]
    groups: dict[tuple, list] = defaultdict(list)
    for binding in distinct.values():
        gkey = tuple(eval_term(rule.head.args[i], binding) for i in group_positions)
        groups[gkey].append(binding)
    out = set()
    for gkey, sols in groups.items():
        vals = iter(gkey)
        row = []
        for t in rule.head.args:
            row.append(_apply_aggregate(t, sols) if isinstance(t, AggregateTerm) else next(vals))
        out.add(tuple(row))
    return out


# -- fixpoint evaluation ---------------------------------------------------


def sort_key(value):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (0, value, "")
    if isinstance(value, str):
        return (1, 0, value)
    if isinstance(value, tuple):
        return (2, 0, tuple(map(sort_key, value)))
    return (3, 0, str(value))


def row_key(row: tuple):
    return tuple(sort_key(v) for v in row)


def _rule_stratum_index(rules, strata):
    level = {p: i for i, s in enumerate(strata) for p in s}
    by_level: dict[int, list] = defaultdict(list)
    for r in rules:
        by_level[level[r.head.predicate]].append(r)
    return [by_level.get(i, []) for i in range(len(strata))]


def _eval_rule(rule: Rule, plan, sources, neg_index, out: set):
    head = rule.head
    for binding in _match(plan, sources, {}, neg_index):
        out.add(tuple(eval_term(t, binding) for t in head.args))


def seminaive_eval(facts: Mapping, rules: Iterable, stratum_order: list | None = None) -> Model:
    """Least model of ``facts`` under stratified ``rules`` (plain and aggregate).

    ``stratum_order`` optionally overrides the order in which strata are run.
    It is either a permutation of indices into :func:`stratify`'s strata or
    an explicit list of predicate sets such as :func:`valid_stratum_orders`
    yields; either way it must respect the dependency order.
    """
    rules = list(rules)
    strata = stratify(rules)
    order = range(len(strata))
    if stratum_order is not None and stratum_order and isinstance(stratum_order[0], frozenset):
        strata = list(stratum_order)
        order = range(len(strata))
    elif stratum_order is not None:
        order = stratum_order
    per_stratum = _rule_stratum_index(rules, strata)

    total: dict[str, set] = {p: rows for p, rows in facts.items()}
    owned: set[str] = set()

    def own(pred):
        if pred not in owned:
            total[pred] = set(total.get(pred, ()))
            owned.add(pred)
        return total[pred]

    # Compile bodies up front so unbound variables surface before evaluation.
    plans = {}
    for r in rules:
        if isinstance(r, Rule):
            plans[id(r)] = _order_body(r.body, set())
        else:
            _order_body(r.body, set())

    for i in order:
        stratum_rules = per_stratum[i]
        if not stratum_rules:
            continue
        heads = {r.head.predicate for r in stratum_rules}
        for r in stratum_rules:
            own(r.head.predicate)
        aggregates = [r for r in stratum_rules if isinstance(r, AggregateRule)]
        plain = [r for r in stratum_rules if isinstance(r, Rule)]
        for r in aggregates:
            total[r.head.predicate] |= eval_aggregate_rule(r, total)

        full = _Indexes(total)
        delta: dict[str, set] = defaultdict(set)
        for r in plain:
            found: set = set()
            _eval_rule(r, plans[id(r)], lambda a: full, full, found)
            new = found - total[r.head.predicate]
            delta[r.head.predicate] |= new
        for p, rows in delta.items():
            total[p] |= rows

        recursive = [
            r for r in plain if any(isinstance(l, Atom) and l.predicate in heads for l in r.body)
        ]
        while any(delta.values()) and recursive:
            full = _Indexes(total)
            dindex = _Indexes(delta)
            new_delta: dict[str, set] = defaultdict(set)
            for r in recursive:
                for pos, lit in enumerate(r.body):
                    if not (isinstance(lit, Atom) and lit.predicate in heads and delta.get(lit.predicate)):
                        continue
                    found = set()
                    plan = _delta_plan(r, pos)
                    _eval_rule(
                        r,
                        plan,
                        lambda a, target=lit: dindex if a is target else full,
                        full,
                        found,
                    )
                    new_delta[r.head.predicate] |= found - total[r.head.predicate]
            for p, rows in new_delta.items():
                total[p] |= rows
            delta = new_delta
    return {p: frozenset(rows) for p, rows in total.items()}


def _delta_plan(rule: Rule, pos: int):
    # Put the delta atom first so the join starts from the (small) delta.
    atom = rule.body[pos]
    plan = [("atom", atom)]
    rest = rule.body[:pos] + rule.body[pos + 1 :]
    plan.extend(_order_body(rest, atom.variables()))
    return plan


def naive_eval(facts: Mapping, rules: Iterable) -> Model:
    """Reference fixpoint: re-run every rule until nothing changes, per stratum."""
    rules = list(rules)
    strata = stratify(rules)
    per_stratum = _rule_stratum_index(rules, strata)
    total = {p: set(rows) for p, rows in facts.items()}
    for stratum_rules in per_stratum:
        for r in stratum_rules:
            total.setdefault(r.head.predicate, set())
        for r in stratum_rules:
            if isinstance(r, AggregateRule):
                total[r.head.predicate] |= eval_aggregate_rule(r, total)
        changed = True
        while changed:
            changed = False
            for r in stratum_rules:
                if isinstance(r, AggregateRule):
                    continue
                rows = {instantiate(r.head, b) for b in match_body(r.body, total)}
                if not rows <= total[r.head.predicate]:
                    total[r.head.predicate] |= rows
                    changed = True
    return {p: frozenset(rows) for p, rows in total.items()}


def stratum_orders(rules: Iterable) -> list[int]:
    """Indices of strata in the default order (helper for order-independence checks)."""
    return list(range(len(stratify(list(rules)))))


def valid_stratum_orders(rules: Iterable, limit: int = 50) -> Iterator[list[frozenset]]:
    """Topological orders of the finest stratification (one stratum per
    recursive component), at most ``limit`` of them.

    Each order can be passed to :func:`seminaive_eval` as ``stratum_order``.
    """
    rules = list(rules)
    stratify(rules)  # rejects unstratifiable input
    edges = dependency_edges(rules)
    heads = {r.head.predicate for r in rules}
    comps = [frozenset(c) for c in _sccs(sorted(edges), edges) if set(c) & heads]
    comp_of = {p: i for i, c in enumerate(comps) for p in c}
    needs = [set() for _ in comps]
    for head, deps in edges.items():
        if head not in comp_of:
            continue
        for d in deps:
            if d in comp_of and comp_of[d] != comp_of[head]:
                needs[comp_of[head]].add(comp_of[d])
    count = 0

    def rec(done, seq):
        nonlocal count
        if count >= limit:
            return
        if len(seq) == len(comps):
            count += 1
            yield [comps[i] for i in seq]
            return
        for i in range(len(comps)):
            if i not in done and needs[i] <= done:
                yield from rec(done | {i}, seq + [i])

    yield from rec(frozenset(), [])
