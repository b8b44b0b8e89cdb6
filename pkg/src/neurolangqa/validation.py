"""Static checks over programs: stratification, dependency closure, validation."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .logic import (
    AggregateRule,
    AggregateTerm,
    Atom,
    Comparison,
    Constant,
    ExistentialRule,
    NegatedExists,
    Negation,
    Program,
    PROB,
    RuleClass,
    SchemaClass,
    Variable,
    expression_variables,
    literal_predicates,
    rule_body_literals,
    rule_body_predicates,
)

RESERVED_PREFIX = "_witness"
PROBABILITY_TOLERANCE = 1e-9


class StratificationError(ValueError):
    """Recursion through negation (or aggregation)."""

    def __init__(self, cycle: list[tuple[str, str, bool]]):
        self.cycle = cycle
        super().__init__("recursion through negation: " + format_cycle(cycle))


def format_cycle(cycle) -> str:
    if not cycle:
        return ""
    parts = [cycle[0][0]]
    for src, dst, negative in cycle:
        parts.append(("→¬ " if negative else "→ ") + dst)
    return " ".join(parts)


def _head_predicates(rule) -> set[str]:
    if isinstance(rule, ExistentialRule):
        return {a.predicate for a in rule.head}
    return {rule.head.predicate}


def dependency_edges(rules: Iterable) -> dict[str, dict[str, bool]]:
    """``edges[head][body_pred]`` is True when the dependency is strict.

    Negated literals and aggregate heads produce strict edges.
    """
    edges: dict[str, dict[str, bool]] = defaultdict(dict)
    for rule in rules:
        strict_rule = isinstance(rule, AggregateRule)
        for head in _head_predicates(rule):
            edges.setdefault(head, {})
            for lit in rule_body_literals(rule):
                for pred, negative in literal_predicates(lit):
                    strict = negative or strict_rule
                    edges[head][pred] = edges[head].get(pred, False) or strict
    return edges


def stratify(rules: Iterable) -> list[frozenset]:
    """Partition predicates into strata, lowest first.

    A predicate sits in the lowest stratum compatible with its positive
    (same-or-lower) and negative (strictly lower) dependencies.
    """
    rules = list(rules)
    edges = dependency_edges(rules)
    preds = set(edges)
    for deps in edges.values():
        preds |= set(deps)
    order = sorted(preds)

    components = _sccs(order, edges)
    comp_of = {p: i for i, comp in enumerate(components) for p in comp}
    for comp in components:
        members = set(comp)
        for head in comp:
            for dep, strict in edges.get(head, {}).items():
                if strict and dep in members:
                    raise StratificationError(_negative_cycle(head, dep, members, edges))

    level: dict[int, int] = {}
    # Tarjan emits components in reverse topological order: dependencies first.
    for i, comp in enumerate(components):
        lvl = 0
        for head in comp:
            for dep, strict in edges.get(head, {}).items():
                j = comp_of[dep]
                if j == i:
                    continue
                lvl = max(lvl, level[j] + (1 if strict else 0))
        level[i] = lvl
    n = max(level.values(), default=-1) + 1
    strata: list[set[str]] = [set() for _ in range(n)]
    for i, comp in enumerate(components):
        strata[level[i]].update(comp)
    return [frozenset(s) for s in strata]


def _sccs(order, edges) -> list[list[str]]:
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    stack: list[str] = []
    on_stack: set[str] = set()
    out: list[list[str]] = []
    counter = [0]

    def connect(v):
        work = [(v, iter(sorted(edges.get(v, {}))))]
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        while work:
            node, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(sorted(edges.get(w, {})))))
                    advanced = True
                    break
                if w in on_stack:
                    low[node] = min(low[node], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                out.append(sorted(comp))

    for v in order:
        if v not in index:
            connect(v)
    return out


def _negative_cycle(head, dep, members, edges):
    # Cycle written in "derives" direction: dep →¬ head → ... → dep.
    first = (dep, head, True)
    if head == dep:
        return [first]
    # BFS from head to dep following "head is used by" edges inside the SCC.
    users: dict[str, list[str]] = defaultdict(list)
    for h in members:
        for d in edges.get(h, {}):
            if d in members:
                users[d].append(h)
    prev = {head: None}
    queue = [head]
    while queue:
        cur = queue.pop(0)
        if cur == dep:
            break
        for nxt in sorted(users[cur]):
            if nxt not in prev:
                prev[nxt] = cur
                queue.append(nxt)
    path = []
    node = dep
    while prev.get(node) is not None:
        path.append(node)
        node = prev[node]
    path.append(head)
    path.reverse()
    cycle = [first]
    for a, b in zip(path, path[1:]):
        cycle.append((a, b, edges[b][a]))
    return cycle


def dependency_closure(target: Iterable[str], rules: Iterable) -> set[str]:
    """Predicates reachable from ``target`` following head → body edges."""
    edges = dependency_edges(rules)
    seen = set(target)
    stack = list(seen)
    while stack:
        p = stack.pop()
        for dep in edges.get(p, {}):
            if dep not in seen:
                seen.add(dep)
                stack.append(dep)
    return seen


# -- program validation ----------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    location: str = ""

    def __str__(self) -> str:
        where = f" [{self.location}]" if self.location else ""
        return f"{self.code}: {self.message}{where}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def add(self, code, message, location=""):
        self.violations.append(Violation(code, message, location))

    def __str__(self) -> str:
        return "\n".join(map(str, self.violations)) or "ok"


def _loc(kind: str, index: int, rule) -> str:
    span = getattr(rule, "span", None)
    return f"{kind}#{index}" + (f" @{span}" if span else "")


def _range_restriction(report, rule, body, head_terms, loc):
    bound: set[Variable] = set()
    for lit in body:
        if isinstance(lit, Atom):
            bound |= lit.variables()
    # Equality with an already bound expression binds a variable.
    changed = True
    while changed:
        changed = False
        for lit in body:
            if isinstance(lit, Comparison) and lit.op == "==":
                for a, b in ((lit.left, lit.right), (lit.right, lit.left)):
                    if isinstance(a, Variable) and a not in bound and expression_variables(b) <= bound:
                        bound.add(a)
                        changed = True
    for lit in body:
        if isinstance(lit, (Negation, NegatedExists, Comparison)):
            free = lit.variables() - bound
            if free:
                names = ", ".join(sorted(v.name for v in free))
                report.add("unbound-variable", f"{names} in '{lit}' not bound by a positive atom", loc)
    head_vars: set[Variable] = set()
    for t in head_terms:
        if isinstance(t, Variable):
            head_vars.add(t)
        elif isinstance(t, AggregateTerm):
            head_vars |= {a for a in t.args if isinstance(a, Variable)}
    free = head_vars - bound
    if free:
        names = ", ".join(sorted(v.name for v in free))
        report.add("unsafe-head", f"head variables {names} do not occur in the body", loc)


def validate_program(program: Program) -> ValidationReport:
    report = ValidationReport()
    schema = program.schema
    prob = program.probabilistic_predicates
    target = program.target_predicates
    chi_heads = {r.head.predicate for r in program.chi}
    per_heads = {r.head.predicate for r in program.pers}
    agg_heads = {r.head.predicate for r in program.aggregates}

    # Arity consistency and schema partition.
    arities: dict[str, set[int]] = defaultdict(set)

    def note(atom):
        arities[atom.predicate].add(atom.arity)

    for a in program.facts + program.ontology_facts:
        note(a)
    for c in program.choices:
        for a, _ in c.alternatives:
            note(a)
    for rule in program.all_rules():
        heads = rule.head if isinstance(rule, ExistentialRule) else (rule.head,)
        for h in heads:
            note(h)
        for lit in rule_body_literals(rule):
            for atom in _atoms_of(lit):
                note(atom)
    for d in program.declarations:
        arities[d.name].add(d.arity)
    for name, found in sorted(arities.items()):
        if len(found) > 1:
            report.add("arity-mismatch", f"{name} used with arities {sorted(found)}", name)

    declared = defaultdict(set)
    for d in program.declarations:
        declared[d.name].add(d.schema_class)
    for name, classes in declared.items():
        if len(classes) > 1:
            report.add("schema-conflict", f"{name} declared as {sorted(c.value for c in classes)}", name)
    for name in prob & target:
        report.add("schema-conflict", f"{name} is both probabilistic and target", name)

    # D and D1.
    for kind, facts in (("D", program.facts), ("D1", program.ontology_facts)):
        for i, a in enumerate(facts):
            if a.predicate in prob or a.predicate in target:
                report.add("fact-not-deterministic", f"{a} in {kind} uses a non-deterministic predicate", _loc(kind, i, a))
            if not a.is_ground():
                report.add("fact-not-ground", f"{a} is not ground", _loc(kind, i, a))

    # Probabilistic choices.
    seen_atoms: dict[Atom, int] = {}
    for j, c in enumerate(program.choices):
        loc = _loc("C", j, c)
        if not c.alternatives:
            report.add("empty-choice", "choice without alternatives", loc)
        total = 0.0
        for a, p in c.alternatives:
            if not a.is_ground():
                report.add("choice-not-ground", f"{a} is not ground", loc)
            if not (0.0 < p <= 1.0):
                report.add("probability-range", f"{a} has probability {p} outside (0, 1]", loc)
            total += p
            if a in seen_atoms:
                if seen_atoms[a] != j:
                    report.add("atom-in-two-constraints", f"{a} appears in two constraints", loc)
                else:
                    report.add("atom-in-two-constraints", f"{a} repeated inside one constraint", loc)
            seen_atoms[a] = j
        if total > 1.0 + PROBABILITY_TOLERANCE:
            report.add("probability-sum", f"alternatives sum to {total} > 1", loc)

    # Negation is never allowed on probabilistic atoms.
    prob_like = prob | chi_heads
    for rule in program.all_rules():
        for lit in rule_body_literals(rule):
            for pred, negative in literal_predicates(lit):
                if negative and pred in prob_like:
                    report.add("negated-probabilistic", f"negation of probabilistic predicate {pred} in '{rule}'", _loc("rule", 0, rule))

    # Reserved names.
    for rule in program.all_rules():
        for h in _head_predicates(rule):
            if h.startswith(RESERVED_PREFIX):
                report.add("reserved-predicate", f"{h} is reserved", _loc("rule", 0, rule))

    # Σ₁: over R_D, no negation or builtins.
    for i, rule in enumerate(program.existential_rules):
        loc = _loc("Sigma1", i, rule)
        for lit in rule.body:
            if not isinstance(lit, Atom):
                report.add("existential-body", f"'{lit}' not allowed in an existential rule body", loc)
        for atom in list(rule.head) + [l for l in rule.body if isinstance(l, Atom)]:
            if atom.predicate in prob or atom.predicate in target or atom.predicate in chi_heads:
                report.add("existential-schema", f"{atom.predicate} is not deterministic", loc)
        if not rule.head:
            report.add("existential-head", "empty head", loc)
        _range_restriction(report, rule, rule.body, (), loc)

    # Plain rules (Σ and χ).
    for i, rule in enumerate(program.rules):
        cls = program.rule_class(rule)
        loc = _loc("Sigma" if cls is RuleClass.SIGMA else "chi", i, rule)
        if not rule.body:
            report.add("empty-body", "rule without body", loc)
        if rule.head.predicate in prob:
            report.add("head-probabilistic", f"{rule.head.predicate} is a probabilistic base predicate", loc)
        if rule.head.predicate in target:
            report.add("head-target", f"{rule.head.predicate} is a target predicate defined by a plain rule", loc)
        if any(not isinstance(t, (Variable, Constant)) for t in rule.head.args):
            report.add("head-term", f"invalid head term in '{rule}'", loc)
        if cls is RuleClass.CHI:
            for lit in rule.body:
                if isinstance(lit, (Negation, NegatedExists)):
                    report.add("negation-in-chi", f"negation in χ rule '{rule}'", loc)
            bad = rule_body_predicates(rule) & (per_heads | agg_heads | target)
            if bad:
                report.add("chi-depends-on-target", f"χ rule uses {sorted(bad)}", loc)
        _range_restriction(report, rule, rule.body, rule.head.args, loc)

    chi = program.chi
    edges = dependency_edges(chi)
    for comp in _sccs(sorted(edges), edges):
        cyclic = len(comp) > 1 or comp[0] in edges.get(comp[0], {})
        if cyclic and set(comp) & chi_heads:
            report.add("recursion-in-chi", f"recursive χ predicates {comp}", "chi")

    # PERs.
    for i, rule in enumerate(program.pers):
        loc = _loc("Pi", i, rule)
        args = rule.head.args
        if not args or args[-1] is not PROB:
            report.add("per-head", "PROB must be the last head argument", loc)
        if sum(1 for a in args if a is PROB) != 1:
            report.add("per-head", "exactly one PROB argument required", loc)
        if rule.head.predicate in prob:
            report.add("per-head", f"{rule.head.predicate} is probabilistic", loc)
        bad = rule_body_predicates(rule) & (per_heads | agg_heads | target)
        if bad:
            report.add("per-body", f"PER body uses target/aggregate predicates {sorted(bad)}", loc)
        for lit in rule_body_literals(rule):
            if isinstance(lit, Atom) and any(a is PROB for a in lit.args):
                report.add("per-body", "PROB is only valid in a PER head", loc)
        head_terms = [a for a in args if a is not PROB]
        body = rule.body + (rule.given or ())
        _range_restriction(report, rule, body, head_terms, loc)

    # Aggregation rules.
    agg_edges = dependency_edges(program.aggregates)
    for i, rule in enumerate(program.aggregates):
        loc = _loc("A", i, rule)
        for lit in rule.body:
            if isinstance(lit, (Negation, NegatedExists)):
                report.add("negation-in-aggregate", f"negation in aggregation rule '{rule}'", loc)
        bad = rule_body_predicates(rule) & (prob | chi_heads)
        if bad:
            report.add("aggregate-body", f"aggregation over probabilistic predicates {sorted(bad)}", loc)
        aggs = [t for t in rule.head.args if isinstance(t, AggregateTerm)]
        if not aggs:
            report.add("aggregate-head", "no aggregation function in head", loc)
        if rule.head.predicate in rule_body_predicates(rule):
            report.add("recursion-in-aggregate", f"{rule.head.predicate} aggregates over itself", loc)
        for t in aggs:
            if t.function == "compute_percentile" and (len(t.args) != 2 or not isinstance(t.args[1], Constant)):
                report.add("aggregate-head", "compute_percentile(v, q) needs a constant q", loc)
        _range_restriction(report, rule, rule.body, rule.head.args, loc)
    for comp in _sccs(sorted(agg_edges), agg_edges):
        heads = set(comp) & agg_heads
        if len(comp) > 1 and heads:
            report.add("recursion-in-aggregate", f"recursive aggregation through {comp}", "A")
    shared = agg_heads & ({r.head.predicate for r in program.rules} | per_heads)
    for name in sorted(shared):
        report.add("aggregate-head", f"{name} is defined by both aggregation and other rules", name)

    # The deterministic layer must stratify.
    try:
        stratify(tuple(program.sigma) + tuple(program.aggregates))
    except StratificationError as exc:
        report.add("not-stratified", str(exc), "Sigma")

    for name, decl in schema.items():
        if decl.schema_class is SchemaClass.TARGET and decl.arity < 1:
            report.add("target-arity", f"target predicate {name} needs a probability argument", name)
    return report


def _atoms_of(lit):
    if isinstance(lit, Atom):
        yield lit
    elif isinstance(lit, Negation):
        yield lit.atom
    elif isinstance(lit, NegatedExists):
        for inner in lit.body:
            yield from _atoms_of(inner)


def validate_query(program: Program, body: Iterable) -> ValidationReport:
    report = ValidationReport()
    bad = set()
    for lit in body:
        for pred, _ in literal_predicates(lit):
            if pred in program.probabilistic_predicates or pred in program.probabilistic_derived:
                bad.add(pred)
    if bad:
        report.add("query-probabilistic", f"query mentions probabilistic predicates {sorted(bad)}; reify them through a PER")
    return report
