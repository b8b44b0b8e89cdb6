"""Parser for the NeuroLang surface dialect, fact files and a pretty-printer.

Conventions: identifiers starting with an uppercase letter or ``_`` are
variables, other bare identifiers and quoted strings are constants, ``#``
starts a line comment. Statements end with ``.``.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TextIO

from .logic import (
    AGGREGATE_FUNCTIONS,
    COMPARISON_OPS,
    PROB,
    AggregateRule,
    AggregateTerm,
    Arithmetic,
    Atom,
    Comparison,
    Constant,
    ExistentialRule,
    NegatedExists,
    Negation,
    PredicateDecl,
    ProbabilityRule,
    ProbChoice,
    Program,
    Query,
    Rule,
    SchemaClass,
    Span,
    Variable,
    body_variables,
    format_value,
)


@dataclass(frozen=True)
class SourceProgram:
    text: str
    origin: str = "<repl>"


@dataclass(frozen=True)
class ParseDiagnostic:
    severity: str
    message: str
    span: Span
    origin: str = "<repl>"

    def __str__(self) -> str:
        return f"{self.origin}:{self.span.line}:{self.span.column}: {self.severity}: {self.message}"


class ParseError(ValueError):
    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(map(str, diagnostics)))


# -- lexer -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<string>"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:-|//|<=|>=|==|!=|[<>()\[\],&|~.:@/+\-*])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    column: int
    end_line: int
    end_column: int

    @property
    def span(self) -> Span:
        return Span(self.line, self.column, self.end_line, self.end_column)


def tokenize(text: str, diagnostics: list, origin: str) -> list[Token]:
    tokens = []
    pos = 0
    line, col = 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            diagnostics.append(
                ParseDiagnostic("error", f"unexpected character {text[pos]!r}", Span(line, col, line, col + 1), origin)
            )
            pos += 1
            col += 1
            continue
        chunk = m.group()
        kind = m.lastgroup
        start_line, start_col = line, col
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
        if kind in ("ws", "comment"):
            continue
        tokens.append(Token(kind, chunk, start_line, start_col, line, col))
    tokens.append(Token("eof", "", line, col, line, col))
    return tokens


def _unquote(text: str) -> str:
    body = text[1:-1]
    return re.sub(r"\\(.)", r"\1", body)


def _number(text: str):
    if re.fullmatch(r"\d+", text):
        return int(text)
    return float(text)


def _is_variable_name(name: str) -> bool:
    return name[0].isupper() or name[0] == "_"


class _Failure(Exception):
    def __init__(self, message: str, token: Token):
        self.message = message
        self.token = token


# -- parser ----------------------------------------------------------------


_SECTION_MARKERS = {"existential", "deterministic-facts", "probabilistic"}


class _Parser:
    def __init__(self, src: SourceProgram):
        self.src = src
        self.diagnostics: list[ParseDiagnostic] = []
        self.tokens = tokenize(src.text, self.diagnostics, src.origin)
        self.pos = 0
        self.section = "default"
        self.aux_counter = 0
        self.facts: list[Atom] = []
        self.ontology_facts: list[Atom] = []
        self.rules: list[Rule] = []
        self.existential: list[ExistentialRule] = []
        self.choices: list[ProbChoice] = []
        self.pers: list[ProbabilityRule] = []
        self.aggregates: list[AggregateRule] = []
        self.declarations: list[PredicateDecl] = []

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, k=1) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def at(self, text: str) -> bool:
        return self.tok.kind == "op" and self.tok.text == text

    def advance(self) -> Token:
        t = self.tok
        if t.kind != "eof":
            self.pos += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise _Failure(f"expected '{text}' but found {self.describe(self.tok)}", self.tok)
        return self.advance()

    @staticmethod
    def describe(t: Token) -> str:
        return "end of input" if t.kind == "eof" else f"'{t.text}'"

    def error(self, message: str, token: Token):
        self.diagnostics.append(ParseDiagnostic("error", message, token.span, self.src.origin))

    def warn(self, message: str, token: Token):
        self.diagnostics.append(ParseDiagnostic("warning", message, token.span, self.src.origin))

    def recover(self):
        depth = 0
        while self.tok.kind != "eof":
            t = self.advance()
            if t.kind == "op":
                if t.text == "(":
                    depth += 1
                elif t.text == ")":
                    depth = max(0, depth - 1)
                elif t.text == "." and depth == 0:
                    return

    # top level
    def parse(self) -> Program:
        while self.tok.kind != "eof":
            start = self.pos
            try:
                if self.at("@"):
                    self.marker()
                else:
                    self.statement()
            except _Failure as exc:
                self.error(exc.message, exc.token)
                if self.pos == start:
                    self.advance()
                self.recover()
        if any(d.severity == "error" for d in self.diagnostics):
            raise ParseError(self.diagnostics)
        return Program(
            facts=tuple(self.facts),
            ontology_facts=tuple(self.ontology_facts),
            rules=tuple(self.rules),
            existential_rules=tuple(self.existential),
            choices=tuple(self.choices),
            pers=tuple(self.pers),
            aggregates=tuple(self.aggregates),
            declarations=tuple(self.declarations),
        )

    def marker(self):
        at = self.expect("@")
        if self.tok.kind != "ident":
            raise _Failure("expected a section name after '@'", self.tok)
        name = self.advance().text
        while self.at("-") and self.peek().kind == "ident":
            self.advance()
            name += "-" + self.advance().text
        sigs = []
        while self.tok.kind == "ident" and self.peek().kind == "op" and self.peek().text == "/":
            pred = self.advance().text
            self.advance()
            if self.tok.kind != "number" or not re.fullmatch(r"\d+", self.tok.text):
                raise _Failure("expected an arity after '/'", self.tok)
            sigs.append((pred, int(self.advance().text)))
            if self.at(","):
                self.advance()
        if self.at("."):
            self.advance()
        classes = {
            "target": SchemaClass.TARGET,
            "probabilistic": SchemaClass.PROBABILISTIC,
            "deterministic": SchemaClass.DETERMINISTIC,
            "deterministic-facts": SchemaClass.DETERMINISTIC,
        }
        if sigs:
            if name not in classes:
                raise _Failure(f"'@{name}' does not take predicate signatures", at)
            for pred, arity in sigs:
                self.declarations.append(PredicateDecl(pred, arity, classes[name]))
            return
        if name == "target":
            raise _Failure("'@target' needs a <predicate>/<arity> signature", at)
        if name not in _SECTION_MARKERS:
            raise _Failure(f"unknown section marker '@{name}'", at)
        self.section = name

    def statement(self):
        first = self.tok
        heads = [self.head_atom()]
        while self.at(","):
            self.advance()
            heads.append(self.head_atom())
        span = Span(first.line, first.column, self.tok.end_line, self.tok.end_column)

        if self.at(":") and len(heads) == 1:
            self.choice(heads[0], first)
            return
        if self.at("."):
            self.advance()
            if len(heads) > 1:
                raise _Failure("a fact has a single atom", first)
            self.fact(heads[0], first)
            return
        if not self.at(":-"):
            raise _Failure(f"expected '.', ':' or ':-' but found {self.describe(self.tok)}", self.tok)
        arrow = self.advance()
        if self.at("."):
            raise _Failure("rule with empty body", arrow)
        body = self.disjunction()
        given = None
        if self.at("//"):
            slash = self.advance()
            if not any(self._has_prob(h) for h in heads):
                raise _Failure("'//' is only allowed in a rule whose head contains PROB", slash)
            given = self.disjunction()
        end = self.expect(".")
        span = Span(first.line, first.column, end.end_line, end.end_column)
        self.rule(heads, body, given, span, first)

    @staticmethod
    def _has_prob(atom: Atom) -> bool:
        return any(a is PROB for a in atom.args)

    # facts and choices
    def fact(self, atom: Atom, first: Token):
        self._check_plain(atom, first)
        if not atom.is_ground():
            raise _Failure(f"fact {atom} is not ground", first)
        if self.section == "existential":
            self.ontology_facts.append(atom)
        elif self.section == "probabilistic":
            self.choices.append(ProbChoice(((atom, 1.0),), f"c{len(self.choices) + 1}", atom.span))
        else:
            self.facts.append(atom)

    def _check_plain(self, atom: Atom, first: Token):
        for a in atom.args:
            if a is PROB:
                raise _Failure("PROB is only valid in the head of a rule", first)
            if isinstance(a, AggregateTerm):
                raise _Failure(f"aggregation {a.function} is only valid in a rule head", first)

    def probability(self) -> float:
        t = self.tok
        if t.kind != "number":
            raise _Failure(f"expected a probability but found {self.describe(t)}", t)
        self.advance()
        value = Fraction(t.text)
        if self.at("/") and self.peek().kind == "number":
            self.advance()
            denom = Fraction(self.advance().text)
            if denom == 0:
                raise _Failure("division by zero in probability", t)
            value = value / denom
        p = float(value)
        if not (0.0 < p <= 1.0):
            raise _Failure(f"probability {t.text} outside (0, 1]", t)
        return p

    def choice(self, atom: Atom, first: Token):
        alternatives = []
        while True:
            self._check_plain(atom, first)
            if not atom.is_ground():
                raise _Failure(f"probabilistic fact {atom} is not ground", first)
            self.expect(":")
            alternatives.append((atom, self.probability()))
            if self.at("|"):
                self.advance()
                first = self.tok
                atom = self.atom()
                continue
            break
        end = self.expect(".")
        total = sum(p for _, p in alternatives)
        if total > 1.0 + 1e-9:
            raise _Failure(f"probabilities sum to {total:g} > 1", first)
        span = Span(alternatives[0][0].span.line, alternatives[0][0].span.column, end.end_line, end.end_column)
        self.choices.append(ProbChoice(tuple(alternatives), f"c{len(self.choices) + 1}", span))

    # rules
    def rule(self, heads, body, given, span, first):
        has_prob = [self._has_prob(h) for h in heads]
        has_agg = [any(isinstance(a, AggregateTerm) for a in h.args) for h in heads]
        if self.section == "existential":
            if any(has_prob) or any(has_agg) or given is not None:
                raise _Failure("existential rules cannot reify probabilities or aggregate", first)
            for conj in _dnf(body):
                if not conj:
                    raise _Failure("rule with empty body", first)
                self.existential.append(ExistentialRule(tuple(heads), conj, span))
            return
        if len(heads) > 1:
            raise _Failure("conjunctive heads are only allowed in the @existential section", first)
        head = heads[0]
        if has_prob[0]:
            if head.args[-1] is not PROB or sum(1 for a in head.args if a is PROB) > 1:
                raise _Failure("PROB must appear once, as the last head argument", first)
            outer = set(head.variables())
            main = self.lift_disjunctions(body, outer | _tree_vars(given), span)
            cond = None
            if given is not None:
                cond = self.lift_disjunctions(given, outer | _tree_vars(body), span)
            self.pers.append(ProbabilityRule(head, main, cond, span))
            return
        if has_agg[0]:
            main = self.lift_disjunctions(body, set(head.variables()) | _agg_vars(head), span)
            self.aggregates.append(AggregateRule(head, main, span))
            return
        for conj in _dnf(body):
            self.rules.append(Rule(head, conj, span))

    def lift_disjunctions(self, tree, outer_vars: set, span) -> tuple:
        """Replace disjunctive sub-bodies by auxiliary predicates."""
        if tree[0] == "or":
            return (self._aux_atom(tree, outer_vars, span),)
        items = []
        for node in tree[1]:
            items.append(node)
        out = []
        for i, node in enumerate(items):
            if isinstance(node, tuple) and node and node[0] in ("or", "and"):
                others = set(outer_vars)
                for j, other in enumerate(items):
                    if j != i:
                        others |= _tree_vars(other)
                if node[0] == "or":
                    out.append(self._aux_atom(node, others, span))
                else:
                    out.extend(self.lift_disjunctions(node, others, span))
            else:
                out.append(node)
        return tuple(out)

    def _aux_atom(self, tree, outer_vars: set, span) -> Atom:
        name = f"_or{self.aux_counter}"
        self.aux_counter += 1
        shared = sorted(_tree_vars(tree) & outer_vars, key=lambda v: v.name)
        head = Atom(name, tuple(shared), span)
        for conj in _dnf(tree):
            self.rules.append(Rule(head, conj, span))
        return head

    # bodies
    def disjunction(self):
        items = [self.conjunction()]
        while self.at("|"):
            self.advance()
            items.append(self.conjunction())
        return items[0] if len(items) == 1 else ("or", items)

    def conjunction(self):
        items = [self.body_item()]
        while self.at(",") or self.at("&"):
            self.advance()
            items.append(self.body_item())
        return ("and", items)

    def body_item(self):
        t = self.tok
        if self.at("("):
            self.advance()
            inner = self.disjunction()
            self.expect(")")
            return inner
        if self.at("~"):
            self.advance()
            if self.tok.kind == "ident" and self.tok.text == "exists" and self.peek().text == "(":
                return self.negated_exists()
            return Negation(self.atom())
        if t.kind == "ident" and self.peek().kind == "op" and self.peek().text == "(":
            return self.atom()
        return self.comparison()

    def negated_exists(self):
        self.advance()
        self.expect("(")
        bound = []
        while (
            self.tok.kind == "ident"
            and _is_variable_name(self.tok.text)
            and self.peek().kind == "op"
            and self.peek().text in (",", ";")
        ):
            bound.append(Variable(self.advance().text))
            self.advance()
        if not bound:
            raise _Failure("~exists needs at least one quantified variable", self.tok)
        conj = self.conjunction()
        self.expect(")")
        body = tuple(conj[1])
        for item in body:
            if not isinstance(item, (Atom, Comparison)):
                raise _Failure("only atoms and comparisons are allowed inside ~exists", self.tok)
        return NegatedExists(tuple(bound), body)

    def comparison(self):
        start = self.tok
        left = self.expression()
        if not (self.tok.kind == "op" and self.tok.text in COMPARISON_OPS):
            raise _Failure(f"expected an atom or a comparison but found {self.describe(self.tok)}", self.tok)
        op = self.advance().text
        right = self.expression()
        return Comparison(op, left, right, Span(start.line, start.column, self.tok.line, self.tok.column))

    def expression(self):
        left = self.product()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.advance().text
            left = Arithmetic(op, left, self.product())
        return left

    def product(self):
        left = self.factor()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.advance().text
            left = Arithmetic(op, left, self.factor())
        return left

    def factor(self):
        if self.at("("):
            self.advance()
            inner = self.expression()
            self.expect(")")
            return inner
        return self.term()

    # atoms and terms
    def atom(self) -> Atom:
        t = self.tok
        if t.kind != "ident":
            raise _Failure(f"expected a predicate name but found {self.describe(t)}", t)
        self.advance()
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.term())
            while self.at(","):
                self.advance()
                args.append(self.term())
        end = self.expect(")")
        return Atom(t.text, tuple(args), Span(t.line, t.column, end.end_line, end.end_column))

    def head_atom(self) -> Atom:
        t = self.tok
        if t.kind != "ident":
            raise _Failure(f"expected an atom but found {self.describe(t)}", t)
        self.advance()
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.head_term())
            while self.at(","):
                self.advance()
                args.append(self.head_term())
        end = self.expect(")")
        return Atom(t.text, tuple(args), Span(t.line, t.column, end.end_line, end.end_column))

    def head_term(self):
        t = self.tok
        if t.kind == "ident" and t.text == "PROB":
            self.advance()
            return PROB
        if t.kind == "ident" and self.peek().kind == "op" and self.peek().text == "(":
            if t.text not in AGGREGATE_FUNCTIONS:
                raise _Failure(f"unknown aggregation function '{t.text}'", t)
            self.advance()
            self.expect("(")
            args = []
            if not self.at(")"):
                args.append(self.term())
                while self.at(","):
                    self.advance()
                    args.append(self.term())
            self.expect(")")
            return AggregateTerm(t.text, tuple(args))
        return self.term()

    def term(self):
        t = self.tok
        if t.kind == "ident":
            if t.text == "PROB":
                raise _Failure("PROB is only valid in the head of a rule", t)
            self.advance()
            return Variable(t.text) if _is_variable_name(t.text) else Constant(t.text)
        if t.kind == "string":
            self.advance()
            return Constant(_unquote(t.text))
        if t.kind == "number":
            self.advance()
            return Constant(_number(t.text))
        if self.at("-") and self.peek().kind == "number":
            self.advance()
            return Constant(-_number(self.advance().text))
        raise _Failure(f"expected a term but found {self.describe(t)}", t)


def _tree_vars(tree) -> set:
    if tree is None:
        return set()
    if isinstance(tree, tuple) and tree and tree[0] in ("and", "or"):
        out = set()
        for item in tree[1]:
            out |= _tree_vars(item)
        return out
    return body_variables([tree])


def _agg_vars(head: Atom) -> set:
    out = set()
    for a in head.args:
        if isinstance(a, AggregateTerm):
            out |= {x for x in a.args if isinstance(x, Variable)}
    return out


def _dnf(tree) -> list[tuple]:
    if isinstance(tree, tuple) and tree and tree[0] == "or":
        out = []
        for item in tree[1]:
            out.extend(_dnf(item))
        return out
    if isinstance(tree, tuple) and tree and tree[0] == "and":
        results = [()]
        for item in tree[1]:
            options = _dnf(item)
            results = [r + o for r in results for o in options]
        return results
    return [(tree,)]


def parse_program(src: SourceProgram | str) -> Program:
    """Parse program text. Raises :class:`ParseError` with all diagnostics."""
    if isinstance(src, str):
        src = SourceProgram(src)
    return _Parser(src).parse()


def parse_query(text: str, program: Program | None = None) -> Query:
    """Parse ``"v(X, P), u(P)"`` or a bare predicate name such as ``"Ans"``."""
    stripped = text.strip().rstrip(".")
    if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", stripped):
        arity = None
        if program is not None and stripped in program.schema:
            arity = program.schema[stripped].arity
        if arity is None:
            raise ParseError([ParseDiagnostic("error", f"unknown query predicate {stripped}", Span(1, 1, 1, len(stripped) + 1))])
        head = tuple(Variable(f"_Q{i}") for i in range(arity))
        return Query(head, (Atom(stripped, head),))
    p = _Parser(SourceProgram(stripped, "<query>"))
    try:
        tree = p.disjunction()
        if p.tok.kind != "eof":
            raise _Failure(f"unexpected {p.describe(p.tok)} after query", p.tok)
    except _Failure as exc:
        p.error(exc.message, exc.token)
    if p.diagnostics:
        raise ParseError(p.diagnostics)
    conjs = _dnf(tree)
    if len(conjs) != 1:
        raise ParseError([ParseDiagnostic("error", "queries are conjunctive", Span(1, 1, 1, 2), "<query>")])
    body = conjs[0]
    head = []
    for lit in body:
        for v in _ordered_vars(lit):
            if v not in head and not v.name.startswith("_"):
                head.append(v)
    return Query(tuple(head), body)


def _ordered_vars(lit):
    if isinstance(lit, Atom):
        return [a for a in lit.args if isinstance(a, Variable)]
    if isinstance(lit, Negation):
        return []
    return []


# -- fact files ------------------------------------------------------------


class FactFileError(ValueError):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(diagnostics))


@dataclass
class FactTable:
    facts: list = field(default_factory=list)
    choices: list = field(default_factory=list)


def _cell(text: str):
    text = text.strip()
    if re.fullmatch(r"[-+]?\d+", text):
        return int(text)
    try:
        if re.fullmatch(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?", text):
            return float(text)
    except ValueError:
        pass
    return text


def parse_fact_file(
    stream: TextIO | str,
    decl: PredicateDecl,
    *,
    delimiter: str = "\t",
    header: bool = False,
    choice_group: bool = False,
    origin: str = "<facts>",
) -> FactTable:
    """Read TSV/CSV rows into facts (R_D) or choices (R_P).

    For probabilistic predicates a trailing column may carry per-row
    probabilities. ``choice_group`` turns all rows into one annotated
    disjunction; rows without probabilities then share the mass uniformly.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream, delimiter=delimiter)
    rows = list(reader)
    if header and rows:
        rows = rows[1:]
    errors = []
    table = FactTable()
    probabilistic = decl.schema_class is SchemaClass.PROBABILISTIC or choice_group
    parsed = []
    for lineno, row in enumerate(rows, start=2 if header else 1):
        if not row or all(not c.strip() for c in row):
            continue
        prob = None
        if len(row) == decl.arity + 1 and probabilistic:
            raw = row[-1].strip()
            try:
                prob = float(Fraction(raw))
            except (ValueError, ZeroDivisionError):
                errors.append(f"{origin}:{lineno}: non-numeric probability {raw!r}")
                continue
            if not (0.0 < prob <= 1.0):
                errors.append(f"{origin}:{lineno}: probability {raw} outside (0, 1]")
                continue
            row = row[:-1]
        elif len(row) != decl.arity:
            expected = f"{decl.arity}" + (f" or {decl.arity + 1}" if probabilistic else "")
            errors.append(f"{origin}:{lineno}: expected {expected} columns for {decl.name}, found {len(row)}")
            continue
        atom = Atom(decl.name, tuple(Constant(_cell(c)) for c in row))
        parsed.append((atom, prob))
    if errors:
        raise FactFileError(errors)
    if not probabilistic:
        table.facts = [a for a, _ in parsed]
        return table
    if choice_group:
        if not parsed:
            return table
        if all(p is None for _, p in parsed):
            uniform = 1.0 / len(parsed)
            alts = tuple((a, uniform) for a, _ in parsed)
        elif any(p is None for _, p in parsed):
            raise FactFileError([f"{origin}: either all or no rows of a choice group carry probabilities"])
        else:
            alts = tuple(parsed)
            total = sum(p for _, p in alts)
            if total > 1.0 + 1e-9:
                raise FactFileError([f"{origin}: choice group probabilities sum to {total:g} > 1"])
        table.choices = [ProbChoice(alts)]
        return table
    table.choices = [ProbChoice(((a, 1.0 if p is None else p),)) for a, p in parsed]
    return table


# -- pretty printing -------------------------------------------------------


def _fmt_body(body) -> str:
    return ", ".join(map(str, body))


def format_program(program: Program) -> str:
    """Render a program in the surface syntax accepted by :func:`parse_program`."""
    lines = []
    for d in program.declarations:
        marker = {
            SchemaClass.TARGET: "target",
            SchemaClass.PROBABILISTIC: "probabilistic",
            SchemaClass.DETERMINISTIC: "deterministic",
        }[d.schema_class]
        lines.append(f"@{marker} {d.name}/{d.arity}")
    for a in program.facts:
        lines.append(f"{a}.")
    for c in program.choices:
        lines.append(" | ".join(f"{a} : {format_value(p)}" for a, p in c.alternatives) + ".")
    for r in program.rules:
        lines.append(f"{r.head} :- {_fmt_body(r.body)}.")
    for r in program.pers:
        text = f"{r.head} :- {_fmt_body(r.body)}"
        if r.given is not None:
            text += f" // ({_fmt_body(r.given)})"
        lines.append(text + ".")
    for r in program.aggregates:
        lines.append(f"{r.head} :- {_fmt_body(r.body)}.")
    if program.ontology_facts or program.existential_rules:
        lines.append("@existential")
        for a in program.ontology_facts:
            lines.append(f"{a}.")
        for r in program.existential_rules:
            lines.append(f"{', '.join(map(str, r.head))} :- {_fmt_body(r.body)}.")
    return "\n".join(lines) + "\n"
