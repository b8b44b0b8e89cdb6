"""Logic IR: terms, atoms, literals, rules, probabilistic choices and programs.

Everything here is immutable. Ground tuples stored in relations use plain
Python values (``str``, ``int``, ``float`` or :class:`Overlay`); the
:class:`Constant` wrapper only appears inside rules and atoms.
"""
from __future__ import annotations

import enum
import itertools
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Union


@dataclass(frozen=True)
class Span:
    line: int
    column: int
    end_line: int
    end_column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class Variable:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Constant:
    value: object

    def __str__(self) -> str:
        return format_value(self.value)


@dataclass(frozen=True)
class Null:
    """Labeled null. Only the chase and the rewriter create these."""

    id: int

    def __str__(self) -> str:
        return f"_:n{self.id}"


class _ProbMarker:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "PROB"

    __str__ = __repr__

    def __reduce__(self):
        return (_ProbMarker, ())


PROB = _ProbMarker()

AGGREGATE_FUNCTIONS = frozenset(
    {"max", "min", "sum", "count", "mean", "compute_percentile", "create_region_overlay"}
)


@dataclass(frozen=True)
class AggregateTerm:
    function: str
    args: tuple

    def __str__(self) -> str:
        return f"{self.function}({', '.join(map(str, self.args))})"


@dataclass(frozen=True)
class Overlay:
    """Grouped (i, j, k, p) rows produced by ``create_region_overlay``."""

    rows: tuple

    def __len__(self) -> int:
        return len(self.rows)

    def __str__(self) -> str:
        return f"overlay({len(self.rows)} rows)"


Term = Union[Variable, Constant, Null]


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple = ()
    span: Span | None = field(default=None, compare=False, repr=False)

    @property
    def arity(self) -> int:
        return len(self.args)

    def variables(self) -> set[Variable]:
        return {a for a in self.args if isinstance(a, Variable)}

    def is_ground(self) -> bool:
        return all(isinstance(a, Constant) for a in self.args)

    def values(self) -> tuple:
        return tuple(a.value for a in self.args)

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(map(str, self.args))})"


@dataclass(frozen=True)
class Negation:
    atom: Atom

    def variables(self) -> set[Variable]:
        return self.atom.variables()

    def __str__(self) -> str:
        return f"~{self.atom}"


@dataclass(frozen=True)
class NegatedExists:
    """``~exists(V..., conj)``: no extension of the outer binding satisfies conj."""

    bound: tuple
    body: tuple

    def variables(self) -> set[Variable]:
        inner = set().union(*(lit.variables() for lit in self.body)) if self.body else set()
        return inner - set(self.bound)

    def __str__(self) -> str:
        names = ", ".join(map(str, self.bound))
        return f"~exists({names}, {', '.join(map(str, self.body))})"


@dataclass(frozen=True)
class Arithmetic:
    op: str
    left: object
    right: object

    def variables(self) -> set[Variable]:
        return expression_variables(self.left) | expression_variables(self.right)

    def __str__(self) -> str:
        return f"({self.left} {self.op} {self.right})"


COMPARISON_OPS = ("<=", ">=", "==", "!=", "<", ">")


@dataclass(frozen=True)
class Comparison:
    op: str
    left: object
    right: object
    span: Span | None = field(default=None, compare=False, repr=False)

    def variables(self) -> set[Variable]:
        return expression_variables(self.left) | expression_variables(self.right)

    def __str__(self) -> str:
        return f"{_expr_str(self.left)} {self.op} {_expr_str(self.right)}"


Literal = Union[Atom, Negation, NegatedExists, Comparison]


def _expr_str(e) -> str:
    s = str(e)
    if isinstance(e, Arithmetic) and s.startswith("(") and s.endswith(")"):
        return s[1:-1]
    return s


def expression_variables(expr) -> set[Variable]:
    if isinstance(expr, Variable):
        return {expr}
    if isinstance(expr, Arithmetic):
        return expr.variables()
    return set()


def literal_predicates(lit) -> Iterator[tuple[str, bool]]:
    """Yield ``(predicate, negative)`` for every predicate a literal mentions."""
    if isinstance(lit, Atom):
        yield lit.predicate, False
    elif isinstance(lit, Negation):
        yield lit.atom.predicate, True
    elif isinstance(lit, NegatedExists):
        for inner in lit.body:
            for pred, _ in literal_predicates(inner):
                yield pred, True


def positive_atoms(body: Iterable) -> list[Atom]:
    return [lit for lit in body if isinstance(lit, Atom)]


def body_variables(body: Iterable) -> set[Variable]:
    out: set[Variable] = set()
    for lit in body:
        out |= lit.variables()
    return out


class RuleClass(enum.Enum):
    SIGMA = "fullTGD-Σ"
    EXISTENTIAL = "existentialTGD-Σ₁"
    CHI = "fullTGD-χ"
    PER = "PER-Π"
    AGGREGATE = "AGG-A"


@dataclass(frozen=True)
class Rule:
    """A full TGD ``head :- body``, possibly with stratified negation."""

    head: Atom
    body: tuple
    span: Span | None = field(default=None, compare=False, repr=False)

    def head_predicates(self) -> set[str]:
        return {self.head.predicate}

    def __str__(self) -> str:
        return f"{self.head} :- {', '.join(map(str, self.body))}."


@dataclass(frozen=True)
class ExistentialRule:
    head: tuple
    body: tuple
    span: Span | None = field(default=None, compare=False, repr=False)

    def head_predicates(self) -> set[str]:
        return {a.predicate for a in self.head}

    @property
    def existential_variables(self) -> set[Variable]:
        head_vars = set().union(*(a.variables() for a in self.head))
        return head_vars - body_variables(self.body)

    @property
    def frontier(self) -> set[Variable]:
        head_vars = set().union(*(a.variables() for a in self.head))
        return head_vars & body_variables(self.body)

    def __str__(self) -> str:
        heads = ", ".join(map(str, self.head))
        return f"{heads} :- {', '.join(map(str, self.body))}."


@dataclass(frozen=True)
class ProbabilityRule:
    """A PER. ``given`` holds the right-hand side of ``//`` when present."""

    head: Atom
    body: tuple
    given: tuple | None = None
    span: Span | None = field(default=None, compare=False, repr=False)

    def head_predicates(self) -> set[str]:
        return {self.head.predicate}

    @property
    def answer_variables(self) -> tuple:
        seen = []
        for a in self.head.args:
            if isinstance(a, Variable) and a not in seen:
                seen.append(a)
        return tuple(seen)

    def __str__(self) -> str:
        text = f"{self.head} :- {', '.join(map(str, self.body))}"
        if self.given is not None:
            text += f" // ({', '.join(map(str, self.given))})"
        return text + "."


@dataclass(frozen=True)
class AggregateRule:
    head: Atom
    body: tuple
    span: Span | None = field(default=None, compare=False, repr=False)

    def head_predicates(self) -> set[str]:
        return {self.head.predicate}

    @property
    def group_variables(self) -> tuple:
        return tuple(a for a in self.head.args if isinstance(a, Variable))

    def __str__(self) -> str:
        return f"{self.head} :- {', '.join(map(str, self.body))}."


AnyRule = Union[Rule, ExistentialRule, ProbabilityRule, AggregateRule]


def rule_body_literals(rule) -> tuple:
    if isinstance(rule, ProbabilityRule) and rule.given is not None:
        return rule.body + rule.given
    return rule.body


def rule_body_predicates(rule) -> set[str]:
    return {p for lit in rule_body_literals(rule) for p, _ in literal_predicates(lit)}


@dataclass(frozen=True)
class ProbChoice:
    """One probabilistic constraint ``a1:p1 | ... | ak:pk``."""

    alternatives: tuple
    id: str = ""
    span: Span | None = field(default=None, compare=False, repr=False)

    @property
    def atoms(self) -> tuple:
        return tuple(a for a, _ in self.alternatives)

    @property
    def bottom(self) -> float:
        return 1.0 - sum(p for _, p in self.alternatives)

    def __str__(self) -> str:
        return " | ".join(f"{a} : {format_value(p)}" for a, p in self.alternatives) + "."


class SchemaClass(enum.Enum):
    DETERMINISTIC = "deterministic"
    PROBABILISTIC = "probabilistic"
    TARGET = "target"


@dataclass(frozen=True)
class PredicateDecl:
    name: str
    arity: int
    schema_class: SchemaClass = SchemaClass.DETERMINISTIC


@dataclass(frozen=True)
class Query:
    head: tuple
    body: tuple

    def __str__(self) -> str:
        return f"ans({', '.join(map(str, self.head))}) :- {', '.join(map(str, self.body))}"


@dataclass(frozen=True)
class Program:
    """A NeuroLang program.

    ``rules`` holds every plain full TGD; the split into Σ (deterministic)
    and χ (rules fed by probabilistic atoms) depends on the schema and is
    computed by :attr:`sigma` and :attr:`chi`.
    """

    facts: tuple = ()
    ontology_facts: tuple = ()
    rules: tuple = ()
    existential_rules: tuple = ()
    choices: tuple = ()
    pers: tuple = ()
    aggregates: tuple = ()
    declarations: tuple = ()

    @cached_property
    def probabilistic_predicates(self) -> frozenset:
        declared = {
            d.name for d in self.declarations if d.schema_class is SchemaClass.PROBABILISTIC
        }
        in_choices = {a.predicate for c in self.choices for a, _ in c.alternatives}
        return frozenset(declared | in_choices)

    @cached_property
    def target_predicates(self) -> frozenset:
        declared = {d.name for d in self.declarations if d.schema_class is SchemaClass.TARGET}
        return frozenset(declared | {p.head.predicate for p in self.pers})

    @cached_property
    def probabilistic_derived(self) -> frozenset:
        """Heads of plain rules whose positive body reaches a probabilistic atom."""
        derived: set[str] = set(self.probabilistic_predicates)
        changed = True
        while changed:
            changed = False
            for rule in self.rules:
                h = rule.head.predicate
                if h in derived:
                    continue
                if any(a.predicate in derived for a in positive_atoms(rule.body)):
                    derived.add(h)
                    changed = True
        return frozenset(derived - self.probabilistic_predicates)

    @cached_property
    def sigma(self) -> tuple:
        return tuple(r for r in self.rules if r.head.predicate not in self.probabilistic_derived)

    @cached_property
    def chi(self) -> tuple:
        return tuple(r for r in self.rules if r.head.predicate in self.probabilistic_derived)

    def rule_class(self, rule) -> RuleClass:
        if isinstance(rule, ExistentialRule):
            return RuleClass.EXISTENTIAL
        if isinstance(rule, ProbabilityRule):
            return RuleClass.PER
        if isinstance(rule, AggregateRule):
            return RuleClass.AGGREGATE
        if rule.head.predicate in self.probabilistic_derived:
            return RuleClass.CHI
        return RuleClass.SIGMA

    def all_rules(self) -> Iterator:
        return itertools.chain(self.rules, self.existential_rules, self.pers, self.aggregates)

    @cached_property
    def schema(self) -> dict:
        """Every predicate with its inferred arity and class."""
        out: dict[str, PredicateDecl] = {}

        def visit(atom: Atom):
            if atom.predicate not in out:
                out[atom.predicate] = PredicateDecl(atom.predicate, atom.arity, self._class_of(atom.predicate))

        for d in self.declarations:
            out.setdefault(d.name, d)
        for a in itertools.chain(self.facts, self.ontology_facts):
            visit(a)
        for c in self.choices:
            for a, _ in c.alternatives:
                visit(a)
        for rule in self.all_rules():
            heads = rule.head if isinstance(rule, ExistentialRule) else (rule.head,)
            for h in heads:
                visit(h)
            for lit in rule_body_literals(rule):
                for a in _literal_atoms(lit):
                    visit(a)
        return out

    def _class_of(self, name: str) -> SchemaClass:
        if name in self.probabilistic_predicates:
            return SchemaClass.PROBABILISTIC
        if name in self.target_predicates:
            return SchemaClass.TARGET
        return SchemaClass.DETERMINISTIC

    def extend(self, *, facts=(), choices=(), declarations=()) -> "Program":
        """Return a copy with extra facts/choices (e.g. from fact files)."""
        start = len(self.choices)
        renumbered = tuple(
            ProbChoice(c.alternatives, c.id or f"c{start + i + 1}", c.span)
            for i, c in enumerate(choices)
        )
        return Program(
            facts=self.facts + tuple(facts),
            ontology_facts=self.ontology_facts,
            rules=self.rules,
            existential_rules=self.existential_rules,
            choices=self.choices + renumbered,
            pers=self.pers,
            aggregates=self.aggregates,
            declarations=self.declarations + tuple(declarations),
        )


def _literal_atoms(lit) -> Iterator[Atom]:
    if isinstance(lit, Atom):
        yield lit
    elif isinstance(lit, Negation):
        yield lit.atom
    elif isinstance(lit, NegatedExists):
        for inner in lit.body:
            yield from _literal_atoms(inner)


# -- substitution / unification --------------------------------------------


def substitute_term(term, theta: dict):
    if isinstance(term, Variable):
        return theta.get(term, term)
    if isinstance(term, Arithmetic):
        return Arithmetic(term.op, substitute_term(term.left, theta), substitute_term(term.right, theta))
    return term


def substitute(lit, theta: dict):
    if isinstance(lit, Atom):
        return Atom(lit.predicate, tuple(substitute_term(a, theta) for a in lit.args), lit.span)
    if isinstance(lit, Negation):
        return Negation(substitute(lit.atom, theta))
    if isinstance(lit, Comparison):
        return Comparison(lit.op, substitute_term(lit.left, theta), substitute_term(lit.right, theta), lit.span)
    if isinstance(lit, NegatedExists):
        inner = {k: v for k, v in theta.items() if k not in lit.bound}
        return NegatedExists(lit.bound, tuple(substitute(b, inner) for b in lit.body))
    raise TypeError(f"cannot substitute into {lit!r}")


def format_value(value) -> str:
    """Render a constant the way the parser reads it back."""
    if isinstance(value, bool):
        raise TypeError("booleans are not constants")
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, Overlay):
        return str(value)
    text = str(value)
    if re.fullmatch(r"[a-z][A-Za-z0-9_]*", text) and text not in {"exists"}:
        return text
    escaped = text.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'
