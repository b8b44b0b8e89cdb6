"""End-to-end query answering: rewrite, materialize, reify probabilities, post-process."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Mapping

from .datalog import match_body, row_key, seminaive_eval
from .logic import (
    PROB,
    Overlay,
    Program,
    Query,
    Variable,
    positive_atoms,
    rule_body_predicates,
)
from .prob.events import ChoiceIndex
from .prob.inference import infer, infer_conditional
from .prob.worlds import DEFAULT_WORLD_CAP, oracle_answers, oracle_conditional
from .rewriter import RewriteResult, split_aux, xrewrite
from .validation import ValidationReport, dependency_closure, validate_program, validate_query

WITNESS_PREFIX = "_witness"


class PipelineError(RuntimeError):
    def __init__(self, step: str, cause: BaseException):
        self.step = step
        self.cause = cause
        super().__init__(f"step {step}: {cause}")


class ValidationFailed(ValueError):
    def __init__(self, report: ValidationReport):
        self.report = report
        super().__init__(str(report))


# -- answers -----------------------------------------------------------------


def format_cell(value, precision: int | None = 6) -> str:
    """Float cells use ``precision`` significant digits; None keeps full repr."""
    if isinstance(value, float):
        if precision is None:
            return repr(value)
        return format(value, f".{precision}g")
    if isinstance(value, Overlay):
        return str(value)
    return str(value)


@dataclass
class AnswerSet:
    query: Query
    columns: tuple
    rows: tuple

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def to_table(self, precision: int | None = 6) -> str:
        cells = [[format_cell(v, precision) for v in row] for row in self.rows]
        header = list(self.columns)
        widths = [len(h) for h in header]
        for row in cells:
            for i, c in enumerate(row):
                widths[i] = max(widths[i], len(c))
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
        lines.append("  ".join("-" * w for w in widths))
        for row in cells:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        lines.append(f"({len(self.rows)} row{'s' if len(self.rows) != 1 else ''})")
        return "\n".join(lines) + "\n"

    def to_csv(self, precision: int | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_cell(v, precision) for v in row])
        return buf.getvalue()

    def to_json(self, precision: int | None = None) -> str:
        def cell(v):
            if isinstance(v, float) and precision is not None:
                return float(format(v, f".{precision}g"))
            if isinstance(v, Overlay):
                return [list(r) for r in v.rows]
            return v

        data = {
            "query": str(self.query),
            "columns": list(self.columns),
            "rows": [[cell(v) for v in row] for row in self.rows],
        }
        return json.dumps(data, indent=2, sort_keys=False) + "\n"


def extract_answers(query: Query, model: Mapping) -> AnswerSet:
    """Homomorphism matching of the query body against ``model``."""
    found = set()
    for binding in match_body(query.body, model):
        found.add(tuple(binding[t] if isinstance(t, Variable) else t.value for t in query.head))
    columns = tuple(str(t) if not str(t).startswith("_Q") else f"col{i}" for i, t in enumerate(query.head))
    return AnswerSet(query, columns, tuple(sorted(found, key=row_key)))


# -- trace -------------------------------------------------------------------


@dataclass
class PerTrace:
    index: int
    rule: str
    strategy: str
    answers: int
    dropped: int = 0
    detail: str = ""
    oracle_delta: float | None = None


@dataclass
class PipelineTrace:
    timings: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)
    pers: list = field(default_factory=list)
    rewrite: RewriteResult | None = None
    aux: tuple = ()
    rest: tuple = ()
    aggregates_early: tuple = ()
    aggregates_late: tuple = ()

    @property
    def max_oracle_delta(self) -> float | None:
        deltas = [p.oracle_delta for p in self.pers if p.oracle_delta is not None]
        return max(deltas) if deltas else None

    def to_text(self, explain: bool = True) -> str:
        lines = []
        if explain and self.rewrite is not None:
            lines.append("== rewriting (Σ′ with provenance)")
            lines.append(self.rewrite.explain() or "(empty)")
            lines.append("== split")
            lines.append(f"Aux = {len(self.aux)} rule(s)")
            lines.extend("  " + str(r) for r in self.aux)
            lines.append(f"Rest = {len(self.rest)} rule(s)")
            lines.extend("  " + str(r) for r in self.rest)
            lines.append(f"aggregations before reification: {len(self.aggregates_early)}")
            lines.append(f"aggregations after reification: {len(self.aggregates_late)}")
        lines.append("== probability encoding rules")
        if not self.pers:
            lines.append("(none)")
        for p in self.pers:
            lines.append(f"[{p.index}] {p.rule}")
            lines.append(f"  strategy: {p.strategy}; answers: {p.answers}; dropped: {p.dropped}")
            if p.oracle_delta is not None:
                lines.append(f"  oracle max |Δp|: {p.oracle_delta:.3g}")
            if explain and p.detail:
                lines.extend("  " + l for l in p.detail.splitlines())
        lines.append("== sizes")
        for k, v in self.sizes.items():
            lines.append(f"{k}: {v}")
        lines.append("== timings (s)")
        for k, v in self.timings.items():
            lines.append(f"{k}: {v:.4f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        data = {
            "timings": self.timings,
            "sizes": self.sizes,
            "pers": [p.__dict__ for p in self.pers],
            "aux": [str(r) for r in self.aux],
            "rest": [str(r) for r in self.rest],
        }
        return json.dumps(data, indent=2) + "\n"


# -- algorithm ---------------------------------------------------------------


def _as_model(atoms) -> dict:
    out: dict[str, set] = {}
    for a in atoms:
        out.setdefault(a.predicate, set()).add(a.values())
    return out


def _count(model: Mapping) -> int:
    return sum(len(v) for v in model.values())


def prune_dead_rules(rules: tuple, extensional: set) -> tuple:
    """Drop rules with a positive body atom over a predicate nothing can populate."""
    live = set(extensional)
    changed = True
    while changed:
        changed = False
        for r in rules:
            if r.head.predicate not in live and all(
                    a.predicate in live for a in positive_atoms(r.body)):
                live.add(r.head.predicate)
                changed = True
    return tuple(r for r in rules if all(a.predicate in live for a in positive_atoms(r.body)))


def split_aggregates(program: Program, sigma_prime: tuple) -> tuple[tuple, tuple]:
    """Aggregations computable before probabilities are reified, and the rest."""
    forbidden = set(program.probabilistic_predicates)
    forbidden |= {r.head.predicate for r in program.chi}
    forbidden |= {r.head.predicate for r in program.pers}
    context = sigma_prime + program.chi + program.aggregates
    early, late = [], []
    for r in program.aggregates:
        if dependency_closure(rule_body_predicates(r), context) & forbidden:
            late.append(r)
        else:
            early.append(r)
    return tuple(early), tuple(late)


def reify_pers(program: Program, model: Mapping, index: ChoiceIndex, *, circuit_cap: int = 10**7,
               strategy: str = "auto", oracle: bool = False,
               world_cap: int = DEFAULT_WORLD_CAP) -> tuple[dict, list]:
    """Head facts with their probability plus body witness facts, one entry per PER."""
    b: dict[str, set] = {}
    traces = []
    chi = program.chi
    rp = program.probabilistic_predicates
    for i, per in enumerate(program.pers):
        answer_vars = per.answer_variables
        if per.given is None:
            res = infer(per.body, answer_vars, model, index, chi, rp, circuit_cap, strategy)
            answers, dropped = res.answers, 0
            detail, used = res.describe(), res.strategy
        else:
            res = infer_conditional(answer_vars, per.body, per.given, model, index, chi, rp,
                                    circuit_cap, strategy)
            answers, dropped = res.answers, res.dropped
            detail, used = res.describe(), res.strategy
        if __debug__:
            for t, p in answers.items():
                if not (-1e-12 <= p <= 1.0 + 1e-12):
                    raise AssertionError(f"probability {p!r} for {t} outside [0, 1]")
        delta = None
        if oracle:
            if per.given is None:
                expected = oracle_answers(per.body, answer_vars, model, program.choices, chi, world_cap)
            else:
                expected, _ = oracle_conditional(answer_vars, per.body, per.given, model,
                                                 program.choices, chi, world_cap)
            delta = _max_delta(answers, expected)
        head_rows = b.setdefault(per.head.predicate, set())
        witness_rows = b.setdefault(f"{WITNESS_PREFIX}{i}", set())
        for t, p in answers.items():
            env = dict(zip(answer_vars, t))
            head_rows.add(tuple(
                p if a is PROB else (env[a] if isinstance(a, Variable) else a.value)
                for a in per.head.args
            ))
            witness_rows.add(t)
        traces.append(PerTrace(i, str(per), used, len(answers), dropped, detail, delta))
    return b, traces


def _max_delta(got: dict, expected: dict) -> float:
    if set(got) != set(expected):
        return math.inf
    return max((abs(got[t] - expected[t]) for t in got), default=0.0)


def _merge(*models: Mapping) -> dict:
    out: dict[str, set] = {}
    for m in models:
        for p, rows in m.items():
            out.setdefault(p, set()).update(rows)
    return out


def answer_query(program: Program, query: Query, *, validate: bool = True,
                 circuit_cap: int = 10**7, strategy: str = "auto", oracle: bool = False,
                 world_cap: int = DEFAULT_WORLD_CAP,
                 rewrite_budget: int = 100000) -> tuple[AnswerSet, PipelineTrace]:
    trace = PipelineTrace()
    if validate:
        report = validate_program(program)
        q_report = validate_query(program, query.body)
        for v in q_report.violations:
            report.violations.append(v)
        if not report.ok:
            raise ValidationFailed(report)

    t0 = time.perf_counter()
    try:
        d_prime = _as_model(program.facts + program.ontology_facts)
        rewrite = xrewrite(program.sigma, program.existential_rules, budget=rewrite_budget)
    except Exception as exc:
        raise PipelineError("1 (rewriting)", exc) from exc
    trace.rewrite = rewrite
    t1 = time.perf_counter()
    trace.timings["step1_rewrite"] = t1 - t0

    try:
        extensional = set(d_prime) | set(program.probabilistic_predicates)
        extensional |= {r.head.predicate for r in program.chi + program.pers + program.aggregates}
        extensional |= {f"{WITNESS_PREFIX}{i}" for i in range(len(program.pers))}
        sigma_prime = prune_dead_rules(rewrite.rules, extensional)
        early, late = split_aggregates(program, sigma_prime)
        aux, rest = split_aux(sigma_prime, program.probabilistic_predicates, program.chi,
                              program.pers, program.aggregates)
        trace.aux, trace.rest = aux, rest
        trace.aggregates_early, trace.aggregates_late = early, late
        m = seminaive_eval(d_prime, aux + early)
    except Exception as exc:
        raise PipelineError("2 (deterministic materialization)", exc) from exc
    t2 = time.perf_counter()
    trace.timings["step2_materialize"] = t2 - t1

    try:
        index = ChoiceIndex(program.choices)
        b, per_traces = reify_pers(program, m, index, circuit_cap=circuit_cap, strategy=strategy,
                                   oracle=oracle, world_cap=world_cap)
    except Exception as exc:
        raise PipelineError("3 (probability reification)", exc) from exc
    trace.pers = per_traces
    t3 = time.perf_counter()
    trace.timings["step3_reify"] = t3 - t2

    try:
        m_prime = seminaive_eval(_merge(m, b), rest + late)
    except Exception as exc:
        raise PipelineError("4 (post-processing)", exc) from exc
    t4 = time.perf_counter()
    trace.timings["step4_postprocess"] = t4 - t3

    try:
        answers = extract_answers(query, m_prime)
    except Exception as exc:
        raise PipelineError("5 (answer extraction)", exc) from exc
    trace.timings["step5_extract"] = time.perf_counter() - t4
    trace.sizes = {
        "sigma_prime": len(sigma_prime),
        "aux": len(aux),
        "rest": len(rest),
        "M": _count(m),
        "B": _count(b),
        "M_prime": _count(m_prime),
        "answers": len(answers),
    }
    return answers, trace


def deterministic_model(program: Program, query_rules=()) -> dict:
    """Certain-answer model for probability-free programs (reference for tests)."""
    rewrite = xrewrite(program.sigma, program.existential_rules)
    return seminaive_eval(_as_model(program.facts + program.ontology_facts),
                          rewrite.rules + tuple(program.aggregates) + tuple(query_rules))
