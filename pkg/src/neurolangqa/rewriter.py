"""Stickiness test and piece-unification rewriting of rule bodies."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable

from .logic import (
    Atom,
    Constant,
    ExistentialRule,
    NegatedExists,
    Negation,
    Rule,
    Variable,
    body_variables,
    substitute,
)
from .validation import dependency_closure


class NotSticky(ValueError):
    def __init__(self, rule, variable):
        self.rule = rule
        self.variable = variable
        super().__init__(f"existential rules are not sticky: marked variable {variable} repeats in body of {rule}")


class RewriteBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class MarkedRuleSet:
    rules: tuple
    marking: tuple  # per rule: frozenset of marked variables
    sticky: bool
    witness: tuple | None = None  # (rule, variable)

    def marked_positions(self, index: int) -> set:
        """Body positions (atom index, argument index) holding marked variables."""
        rule = self.rules[index]
        return {
            (i, j)
            for i, atom in enumerate(rule.body)
            for j, t in enumerate(atom.args)
            if t in self.marking[index]
        }


def _heads(rule) -> tuple:
    return rule.head if isinstance(rule, ExistentialRule) else (rule.head,)


def check_sticky(sigma1: Iterable) -> MarkedRuleSet:
    rules = tuple(sigma1)
    marked = []
    for r in rules:
        head_vars = set()
        for h in _heads(r):
            head_vars |= h.variables()
        marked.append({v: 0 for v in body_variables(r.body) if v not in head_vars})

    changed = True
    rounds = 0
    while changed:
        changed = False
        rounds += 1
        positions = set()
        for r, m in zip(rules, marked):
            for atom in r.body:
                if isinstance(atom, Atom):
                    for j, t in enumerate(atom.args):
                        if t in m:
                            positions.add((atom.predicate, j))
        for r, m in zip(rules, marked):
            for h in _heads(r):
                for j, t in enumerate(h.args):
                    if isinstance(t, Variable) and (h.predicate, j) in positions and t not in m:
                        m[t] = rounds
                        changed = True

    witness = None
    for r, m in zip(rules, marked):
        counts = {}
        for atom in r.body:
            if isinstance(atom, Atom):
                for t in atom.args:
                    if t in m:
                        counts[t] = counts.get(t, 0) + 1
        # report the variable marked earliest, the root cause of the violation
        repeated = sorted((v for v, c in counts.items() if c > 1), key=lambda v: (m[v], v.name))
        if repeated:
            witness = (r, repeated[0])
            break
    return MarkedRuleSet(rules, tuple(frozenset(m) for m in marked), witness is None, witness)


@dataclass(frozen=True)
class RewriteStep:
    source: Rule
    existential_rule: ExistentialRule
    unifier: tuple  # ((Variable, term), ...)

    def __str__(self) -> str:
        theta = ", ".join(f"{v}->{t}" for v, t in self.unifier)
        return f"{self.source}  with  {self.existential_rule}  [{theta}]"


@dataclass
class RewriteResult:
    rules: tuple
    provenance: dict = field(default_factory=dict)  # Rule -> tuple of RewriteStep
    originals: tuple = ()

    def explain(self) -> str:
        lines = []
        for r in self.rules:
            chain = self.provenance.get(r, ())
            lines.append(str(r))
            for step in chain:
                lines.append(f"    <- {step}")
        return "\n".join(lines)


# -- unification -----------------------------------------------------------


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, t):
        self.parent.setdefault(t, t)
        root = t
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[t] != root:
            self.parent[t], t = root, self.parent[t]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return True
        if isinstance(ra, Constant) and isinstance(rb, Constant):
            return False
        if isinstance(ra, Constant):
            ra, rb = rb, ra
        self.parent[ra] = rb
        return True

    def classes(self):
        out = {}
        for t in list(self.parent):
            out.setdefault(self.find(t), set()).add(t)
        return out


def _other_literal_vars(body, piece_idx) -> set:
    out = set()
    for i, lit in enumerate(body):
        if i in piece_idx:
            continue
        out |= body_variables([lit])
    return out


class _Fresh:
    def __init__(self, taken: set):
        self.taken = {v.name for v in taken}
        self.n = 0

    def __call__(self) -> Variable:
        while True:
            self.n += 1
            name = f"_V{self.n}"
            if name not in self.taken:
                self.taken.add(name)
                return Variable(name)


def _rename_apart(sigma: ExistentialRule, fresh: _Fresh) -> tuple[ExistentialRule, dict]:
    vs = body_variables(sigma.body)
    for h in sigma.head:
        vs |= h.variables()
    theta = {v: fresh() for v in sorted(vs, key=lambda v: v.name)}
    renamed = ExistentialRule(
        tuple(substitute(h, theta) for h in sigma.head),
        tuple(substitute(b, theta) for b in sigma.body),
    )
    return renamed, theta


def _piece_rewritings(rule: Rule, renamed: ExistentialRule, max_piece: int = 12):
    """Yield (new_rule, unifier) for every admissible piece of ``rule``'s body."""
    head_preds = {}
    for h in renamed.head:
        head_preds.setdefault((h.predicate, h.arity), []).append(h)
    candidates = [
        i
        for i, lit in enumerate(rule.body)
        if isinstance(lit, Atom) and (lit.predicate, lit.arity) in head_preds
    ][:max_piece]
    if not candidates:
        return
    existential = set(renamed.existential_variables)
    sigma_vars = set(existential) | renamed.frontier
    for h in renamed.head:
        sigma_vars |= h.variables()
    head_vars = rule.head.variables()

    for size in range(1, len(candidates) + 1):
        for piece in itertools.combinations(candidates, size):
            options = [head_preds[(rule.body[i].predicate, rule.body[i].arity)] for i in piece]
            for targets in itertools.product(*options):
                uf = _UnionFind()
                ok = True
                for i, h in zip(piece, targets):
                    for a, b in zip(rule.body[i].args, h.args):
                        if not uf.union(a, b):
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    continue
                classes = uf.classes()
                outside = None
                for members in classes.values():
                    ex = members & existential
                    if not ex:
                        continue
                    if len(ex) > 1 or any(isinstance(m, Constant) for m in members):
                        ok = False
                        break
                    if any(m in sigma_vars and m not in ex for m in members):
                        ok = False
                        break
                    local = {m for m in members if isinstance(m, Variable) and m not in sigma_vars}
                    if local & head_vars:
                        ok = False
                        break
                    if outside is None:
                        outside = _other_literal_vars(rule.body, set(piece))
                    if local & outside:
                        ok = False
                        break
                if not ok:
                    continue
                theta = {}
                for root, members in classes.items():
                    rep = _representative(members, sigma_vars)
                    for m in members:
                        if isinstance(m, Variable) and m != rep:
                            theta[m] = rep
                new_body = []
                for i, lit in enumerate(rule.body):
                    if i not in piece:
                        new_body.append(substitute(lit, theta))
                for lit in renamed.body:
                    new_body.append(substitute(lit, theta))
                new_body = tuple(dict.fromkeys(new_body))
                new_rule = Rule(substitute(rule.head, theta), new_body, rule.span)
                unifier = tuple(sorted(theta.items(), key=lambda vt: vt[0].name))
                yield new_rule, unifier


def _representative(members: set, sigma_vars: set):
    consts = [m for m in members if isinstance(m, Constant)]
    if consts:
        return consts[0]
    own = sorted((m for m in members if m not in sigma_vars), key=lambda v: v.name)
    if own:
        return own[0]
    return sorted(members, key=lambda v: v.name)[0]


# -- subsumption -----------------------------------------------------------


def canonical(rule: Rule) -> Rule:
    """Rename variables by first occurrence so equal-up-to-renaming rules coincide."""
    order = {}
    for t in rule.head.args:
        if isinstance(t, Variable) and t not in order:
            order[t] = Variable(f"V{len(order)}")
    body = sorted(rule.body, key=str)
    for lit in body:
        for v in sorted(body_variables([lit]) - set(order), key=lambda v: v.name):
            order[v] = Variable(f"V{len(order)}")
    return Rule(substitute(rule.head, order), tuple(sorted((substitute(l, order) for l in rule.body), key=str)))


def _match_term(pattern, target, theta) -> bool:
    if isinstance(pattern, Variable):
        bound = theta.get(pattern)
        if bound is None:
            theta[pattern] = target
            return True
        return bound == target
    return pattern == target


def subsumes(general: Rule, specific: Rule) -> bool:
    """True if some substitution maps ``general`` onto a sub-rule of ``specific``."""
    if general.head.predicate != specific.head.predicate or general.head.arity != specific.head.arity:
        return False
    theta = {}
    for a, b in zip(general.head.args, specific.head.args):
        if not _match_term(a, b, theta):
            return False
    atoms = [l for l in general.body if isinstance(l, Atom)]
    others = [l for l in general.body if not isinstance(l, Atom)]
    targets = {}
    for l in specific.body:
        if isinstance(l, Atom):
            targets.setdefault((l.predicate, l.arity), []).append(l)
    target_lits = set(specific.body)
    atoms.sort(key=lambda a: len(targets.get((a.predicate, a.arity), ())))

    def search(i, theta):
        if i == len(atoms):
            return all(substitute(l, theta) in target_lits for l in others)
        a = atoms[i]
        for b in targets.get((a.predicate, a.arity), ()):
            t2 = dict(theta)
            if all(_match_term(x, y, t2) for x, y in zip(a.args, b.args)):
                if search(i + 1, t2):
                    return True
        return False

    return search(0, theta)


# -- rewriting -------------------------------------------------------------


def xrewrite(sigma: Iterable[Rule], sigma1: Iterable, budget: int = 100000) -> RewriteResult:
    """Exhaustively rewrite rule bodies of ``sigma`` against the sticky set ``sigma1``.

    Full rules of ``sigma1`` (no existential variables, one head atom) are kept in
    the output as well, so their heads can be materialized directly.
    """
    sigma = tuple(sigma)
    sigma1 = tuple(sigma1)
    marking = check_sticky(sigma1)
    if not marking.sticky:
        raise NotSticky(*marking.witness)

    taken = set()
    for r in sigma + sigma1:
        taken |= body_variables(r.body)
        for h in _heads(r):
            taken |= h.variables()
    fresh = _Fresh(taken)

    originals = list(sigma)
    for s in sigma1:
        if not s.existential_variables and len(s.head) == 1:
            originals.append(Rule(s.head[0], s.body, s.span))
    originals = list(dict.fromkeys(originals))

    output = list(originals)
    seen = {canonical(r) for r in output}
    by_head = {}
    for r in output:
        by_head.setdefault(r.head.predicate, []).append(r)
    provenance = {}
    worklist = list(output)
    generated = 0
    while worklist:
        rule = worklist.pop(0)
        for s in sigma1:
            renamed, _ = _rename_apart(s, fresh)
            for new_rule, unifier in _piece_rewritings(rule, renamed):
                generated += 1
                if generated > budget:
                    raise RewriteBudgetExceeded(f"more than {budget} rewritings generated")
                key = canonical(new_rule)
                if key in seen:
                    continue
                seen.add(key)
                if any(subsumes(old, new_rule) for old in by_head.get(new_rule.head.predicate, ())):
                    continue
                output.append(new_rule)
                by_head.setdefault(new_rule.head.predicate, []).append(new_rule)
                provenance[new_rule] = provenance.get(rule, ()) + (RewriteStep(rule, s, unifier),)
                worklist.append(new_rule)
    return RewriteResult(tuple(output), provenance, tuple(originals))


def split_aux(sigma_prime: Iterable[Rule], probabilistic: Iterable[str], chi: Iterable,
              pers: Iterable = (), aggregates: Iterable = ()) -> tuple[tuple, tuple]:
    """Split rules into those independent of probabilistic data (Aux) and the rest."""
    sigma_prime = tuple(sigma_prime)
    chi = tuple(chi)
    pers = tuple(pers)
    aggregates = tuple(aggregates)
    forbidden = set(probabilistic)
    for r in chi:
        forbidden.add(r.head.predicate)
    for r in pers:
        forbidden.add(r.head.predicate)
    context = sigma_prime + chi + aggregates
    aux, rest = [], []
    for r in sigma_prime:
        body_preds = {p for p in _body_predicates(r)}
        closure = dependency_closure(body_preds, context)
        if closure & forbidden:
            rest.append(r)
        else:
            aux.append(r)
    return tuple(aux), tuple(rest)


def _body_predicates(rule) -> set:
    out = set()
    for lit in rule.body:
        if isinstance(lit, Atom):
            out.add(lit.predicate)
        elif isinstance(lit, Negation):
            out.add(lit.atom.predicate)
        elif isinstance(lit, NegatedExists):
            out |= {a.predicate for a in lit.body if isinstance(a, Atom)}
    return out
