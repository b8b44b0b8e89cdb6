"""Annotated evaluation of the probabilistic rules: every tuple carries the
event under which it is derived."""
from __future__ import annotations

from typing import Iterable, Mapping

from ..datalog import instantiate, match_body
from ..logic import Atom, rule_body_predicates
from .events import TRUE, ChoiceIndex, Expr, conj, disj, lit


class ProvenanceTable(dict):
    """Answer tuple -> event expression."""

    def __init__(self, predicate: str = "", rows=()):
        super().__init__(rows)
        self.predicate = predicate


def _annotated_relations(model: Mapping, index: ChoiceIndex, chi: tuple) -> tuple[dict, dict]:
    rows = {p: set(r) for p, r in model.items()}
    ann: dict[str, dict] = {}
    for pred, facts in index.by_predicate.items():
        rows.setdefault(pred, set()).update(r for r, _, _, _ in facts)
    for head in topological_heads(chi):
        found = {}
        for rule in chi:
            if rule.head.predicate != head:
                continue
            for binding in match_body(rule.body, rows):
                e = _body_event(rule.body, binding, model, index, ann)
                found.setdefault(instantiate(rule.head, binding), []).append(e)
        table = ann.setdefault(head, {})
        for row, events in found.items():
            if row in model.get(head, ()):
                events.append(TRUE)
            table[row] = disj(events)
        rows.setdefault(head, set()).update(found)
    return rows, ann


def topological_heads(rules) -> list[str]:
    """Head predicates of non-recursive ``rules``, dependencies first."""
    deps = {}
    for r in rules:
        deps.setdefault(r.head.predicate, set()).update(rule_body_predicates(r))
    order, done = [], set()

    def visit(p, path):
        if p in done or p not in deps:
            return
        if p in path:
            raise ValueError(f"recursive probabilistic rules through {p}")
        path.add(p)
        for q in sorted(deps[p]):
            visit(q, path)
        path.discard(p)
        done.add(p)
        order.append(p)

    for p in sorted(deps):
        visit(p, set())
    return order


def _atom_event(pred: str, row: tuple, model: Mapping, index: ChoiceIndex, ann: dict) -> Expr:
    table = ann.get(pred)
    if table is not None:
        got = table.get(row)
        if got is not None:
            return got
    if row in model.get(pred, ()):
        return TRUE
    var = index.row_var.get((pred, row))
    if var is not None:
        return lit(*var)
    raise KeyError((pred, row))


def _body_event(body, binding, model, index, ann) -> Expr:
    parts = []
    for item in body:
        if isinstance(item, Atom):
            parts.append(_atom_event(item.predicate, instantiate(item, binding), model, index, ann))
    return conj(parts)


def build_provenance(body, answer_vars, model: Mapping, index: ChoiceIndex,
                     chi: Iterable = ()) -> ProvenanceTable:
    """Event expression for each answer tuple of the conjunctive ``body``."""
    body = tuple(body)
    answer_vars = tuple(answer_vars)
    rows, ann = _annotated_relations(model, index, tuple(chi))
    found: dict[tuple, list] = {}
    for binding in match_body(body, rows):
        key = tuple(binding[v] for v in answer_vars)
        found.setdefault(key, []).append(_body_event(body, binding, model, index, ann))
    return ProvenanceTable("", {k: disj(v) for k, v in found.items()})
