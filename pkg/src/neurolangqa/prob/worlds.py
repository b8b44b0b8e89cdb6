"""Possible-world enumeration: the reference semantics for probabilistic answers."""
from __future__ import annotations

import itertools
import math
from math import fsum
from typing import Iterable, Iterator, Mapping

from ..datalog import match_body, seminaive_eval
from ..logic import Atom, ProbChoice, body_variables, literal_predicates
from ..validation import dependency_closure
from .events import bottom_mass

DEFAULT_WORLD_CAP = 2**22


class CapExceeded(RuntimeError):
    pass


def _options(choice: ProbChoice) -> list:
    """(alternative index or None for ⊥, weight) pairs, alternatives first."""
    opts = [(i, p) for i, (_, p) in enumerate(choice.alternatives)]
    opts.append((None, bottom_mass([p for _, p in choice.alternatives])))
    return opts


def count_total_choices(choices: Iterable[ProbChoice]) -> int:
    return math.prod(len(c.alternatives) + 1 for c in choices)


def total_choices(choices: Iterable[ProbChoice], cap: int = DEFAULT_WORLD_CAP) -> Iterator[tuple]:
    """Yield ``(selection, p)``; ``selection[j]`` is an alternative index or None (⊥).

    Order is lexicographic over choices with the last choice varying fastest
    and each choice's alternatives listed before its ⊥ outcome.
    """
    choices = tuple(choices)
    n = count_total_choices(choices)
    if n > cap:
        raise CapExceeded(f"{n} total choices exceed the cap of {cap}")
    options = [_options(c) for c in choices]
    for combo in itertools.product(*options):
        yield tuple(i for i, _ in combo), math.prod(p for _, p in combo)


def world_atoms(choices, selection) -> list[Atom]:
    return [c.alternatives[i][0] for c, i in zip(choices, selection) if i is not None]


def relevant_choices(choices, predicates: set, rules) -> list[ProbChoice]:
    """Choices that can influence atoms of ``predicates`` through ``rules``."""
    closure = dependency_closure(predicates, rules)
    return [c for c in choices if any(a.predicate in closure for a in c.atoms)]


def _body_predicates(body) -> set:
    out = set()
    for lit in body:
        out |= {p for p, _ in literal_predicates(lit)}
    return out


def _answers_in_world(model, body, answer_vars) -> set:
    out = set()
    for binding in match_body(tuple(body), model):
        out.add(tuple(binding[v] for v in answer_vars))
    return out


def _worlds(model: Mapping, choices, chi, predicates, cap):
    chi = tuple(chi)
    relevant = relevant_choices(choices, predicates, chi)
    base = {p: set(rows) for p, rows in model.items()}
    for selection, p in total_choices(relevant, cap):
        if p <= 0.0:
            continue
        facts = dict(base)
        copied = set()
        for a in world_atoms(relevant, selection):
            if a.predicate not in copied:
                facts[a.predicate] = set(facts.get(a.predicate, ()))
                copied.add(a.predicate)
            facts[a.predicate].add(a.values())
        yield seminaive_eval(facts, chi), p


def oracle_answers(body, answer_vars, model: Mapping, choices: Iterable[ProbChoice],
                   chi: Iterable = (), cap: int = DEFAULT_WORLD_CAP) -> dict:
    """Sum world probabilities onto every answer tuple of the conjunctive ``body``."""
    body = tuple(body)
    acc = {}
    for world, p in _worlds(model, tuple(choices), chi, _body_predicates(body), cap):
        for t in _answers_in_world(world, body, answer_vars):
            acc.setdefault(t, []).append(p)
    return {t: fsum(ps) for t, ps in acc.items()}


def oracle_conditional(answer_vars, body, given, model: Mapping, choices: Iterable[ProbChoice],
                       chi: Iterable = (), cap: int = DEFAULT_WORLD_CAP) -> tuple[dict, int]:
    """Pr(body ∧ given) / Pr(given) per answer tuple, by world enumeration.

    Returns the ratios and the number of tuples dropped for a zero denominator.
    """
    body, given = tuple(body), tuple(given)
    answer_vars = tuple(answer_vars)
    given_vars = body_variables(given)
    cond_vars = tuple(v for v in answer_vars if v in given_vars)
    num, den = {}, {}
    preds = _body_predicates(body) | _body_predicates(given)
    for world, p in _worlds(model, tuple(choices), chi, preds, cap):
        for t in _answers_in_world(world, body + given, answer_vars):
            num.setdefault(t, []).append(p)
        for t in _answers_in_world(world, given, cond_vars):
            den.setdefault(t, []).append(p)
    num = {t: fsum(ps) for t, ps in num.items()}
    den = {t: fsum(ps) for t, ps in den.items()}
    out, dropped = {}, 0
    positions = [answer_vars.index(v) for v in cond_vars]
    for t, n in num.items():
        d = den.get(tuple(t[i] for i in positions), 0.0)
        if d <= 0.0:
            dropped += 1
            continue
        out[t] = n / d
    return out, dropped
