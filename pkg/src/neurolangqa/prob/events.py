"""Hash-consed boolean event expressions over choice alternatives.

A literal ``Lit(c, i)`` is the event "choice ``c`` selected alternative ``i``".
Constructors simplify eagerly: nested connectives are flattened, constants are
absorbed, duplicates collapse, and a conjunction of two different alternatives
of one choice is FALSE.
"""
from __future__ import annotations

import weakref
from math import fsum
from dataclasses import dataclass
from typing import Iterable

from ..logic import Atom, ProbChoice


class Expr:
    __slots__ = ("kind", "children", "choice", "alt", "support", "_hash", "__weakref__")

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return self is other

    def __repr__(self) -> str:
        return to_string(self)

    def __and__(self, other: "Expr") -> "Expr":
        return conj([self, other])

    def __or__(self, other: "Expr") -> "Expr":
        return disj([self, other])

    def __invert__(self) -> "Expr":
        return neg(self)


_TABLE: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


def _make(kind: str, children: frozenset = frozenset(), choice: int = -1, alt: int = -1) -> Expr:
    key = (kind, children, choice, alt)
    found = _TABLE.get(key)
    if found is not None:
        return found
    e = Expr()
    e.kind = kind
    e.children = children
    e.choice = choice
    e.alt = alt
    if kind == "lit":
        e.support = frozenset((choice,))
    else:
        s = frozenset()
        for c in children:
            s |= c.support
        e.support = s
    e._hash = hash(key)
    _TABLE[key] = e
    return e


TRUE = _make("true")
FALSE = _make("false")


def lit(choice: int, alt: int) -> Expr:
    return _make("lit", choice=choice, alt=alt)


def neg(e: Expr) -> Expr:
    if e is TRUE:
        return FALSE
    if e is FALSE:
        return TRUE
    if e.kind == "not":
        return next(iter(e.children))
    return _make("not", frozenset((e,)))


def conj(items: Iterable[Expr]) -> Expr:
    flat = set()
    for e in items:
        if e is FALSE:
            return FALSE
        if e is TRUE:
            continue
        if e.kind == "and":
            flat |= e.children
        else:
            flat.add(e)
    chosen = {}
    for e in flat:
        if e.kind == "lit":
            prev = chosen.setdefault(e.choice, e.alt)
            if prev != e.alt:
                return FALSE
    if not flat:
        return TRUE
    if len(flat) == 1:
        return next(iter(flat))
    return _make("and", frozenset(flat))


def disj(items: Iterable[Expr]) -> Expr:
    flat = set()
    for e in items:
        if e is TRUE:
            return TRUE
        if e is FALSE:
            continue
        if e.kind == "or":
            flat |= e.children
        else:
            flat.add(e)
    if not flat:
        return FALSE
    if len(flat) == 1:
        return next(iter(flat))
    return _make("or", frozenset(flat))


def literals(e: Expr) -> set:
    """All ``(choice, alt)`` pairs mentioned in ``e``."""
    out = set()
    stack = [e]
    seen = set()
    while stack:
        x = stack.pop()
        if x in seen:
            continue
        seen.add(x)
        if x.kind == "lit":
            out.add((x.choice, x.alt))
        else:
            stack.extend(x.children)
    return out


def evaluate(e: Expr, assignment) -> bool:
    """Truth value of ``e`` when choice ``c`` selected ``assignment[c]``."""
    k = e.kind
    if k == "true":
        return True
    if k == "false":
        return False
    if k == "lit":
        return assignment[e.choice] == e.alt
    if k == "not":
        return not evaluate(next(iter(e.children)), assignment)
    if k == "and":
        return all(evaluate(c, assignment) for c in e.children)
    return any(evaluate(c, assignment) for c in e.children)


def to_string(e: Expr, names=None) -> str:
    k = e.kind
    if k == "true":
        return "true"
    if k == "false":
        return "false"
    if k == "lit":
        return names(e.choice, e.alt) if names else f"c{e.choice}={e.alt}"
    if k == "not":
        return "¬" + to_string(next(iter(e.children)), names)
    op = " ∧ " if k == "and" else " ∨ "
    parts = sorted(to_string(c, names) for c in e.children)
    return "(" + op.join(parts) + ")"


@dataclass(frozen=True)
class ChoiceVar:
    choice: int
    alt: int  # == number of alternatives for the ⊥ branch
    weight: float


class ChoiceIndex:
    """Maps probabilistic atoms to choice variables and holds their weights."""

    def __init__(self, choices: Iterable[ProbChoice]):
        self.choices = tuple(choices)
        self.weights = []
        self.atom_var = {}
        self.row_var = {}
        self.by_predicate = {}
        for c, choice in enumerate(self.choices):
            ws = []
            for i, (atom, p) in enumerate(choice.alternatives):
                self.atom_var[atom] = (c, i)
                self.row_var[(atom.predicate, atom.values())] = (c, i)
                self.by_predicate.setdefault(atom.predicate, []).append((atom.values(), c, i, p))
                ws.append(p)
            self.weights.append(tuple(ws))
        self.bottoms = tuple(bottom_mass(ws) for ws in self.weights)
        self._pred_choices = {
            pred: frozenset(c for _, c, _, _ in rows) for pred, rows in self.by_predicate.items()
        }

    def __len__(self) -> int:
        return len(self.choices)

    def weight(self, choice: int, alt: int) -> float:
        ws = self.weights[choice]
        return ws[alt] if alt < len(ws) else self.bottoms[choice]

    def variables(self, choice: int) -> list[ChoiceVar]:
        ws = self.weights[choice]
        out = [ChoiceVar(choice, i, p) for i, p in enumerate(ws)]
        out.append(ChoiceVar(choice, len(ws), self.bottoms[choice]))
        return out

    def expr_of(self, atom: Atom) -> Expr:
        var = self.atom_var.get(atom)
        return FALSE if var is None else lit(*var)

    def predicate_choices(self, pred: str) -> frozenset:
        return self._pred_choices.get(pred, frozenset())

    def name(self, choice: int, alt: int) -> str:
        alts = self.choices[choice].alternatives
        if alt < len(alts):
            return str(alts[alt][0])
        return f"⊥{self.choices[choice].id or choice}"


def bottom_mass(weights) -> float:
    """Mass of the 'none of the alternatives' outcome, snapped to 0 near zero."""
    rest = 1.0 - fsum(weights)
    return 0.0 if rest < 1e-12 else rest
