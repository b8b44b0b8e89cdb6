"""Dispatcher: lifted evaluation when a safe plan exists, exact counting otherwise."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..logic import body_variables
from .circuit import EventCircuit, compile_and_count
from .events import ChoiceIndex
from .lifted import (
    InternalIndependenceViolation,
    NotLiftable,
    SafePlan,
    eval_safe_plan,
    lift_or_compile,
)
from .provenance import build_provenance


@dataclass
class InferenceResult:
    answers: dict
    strategy: str  # "lifted" or "compiled"
    plan: SafePlan | None = None
    not_liftable: NotLiftable | None = None
    circuit_nodes: int = 0
    cache_hits: int = 0
    fallback: str = ""

    def describe(self) -> str:
        if self.strategy == "lifted":
            return "lifted\n" + "\n".join("  " + l for l in str(self.plan).splitlines())
        lines = ["compiled"]
        if self.not_liftable is not None:
            lines.append(f"  {self.not_liftable}")
        if self.fallback:
            lines.append(f"  fallback: {self.fallback}")
        lines.append(f"  circuit nodes: {self.circuit_nodes}, cache hits: {self.cache_hits}")
        return "\n".join(lines)


def infer(body, answer_vars, model: Mapping, index: ChoiceIndex, chi: Iterable = (),
          probabilistic: Iterable[str] = (), circuit_cap: int = 10**7,
          strategy: str = "auto") -> InferenceResult:
    """Probability of every answer tuple of the conjunctive ``body``."""
    body, answer_vars, chi = tuple(body), tuple(answer_vars), tuple(chi)
    witness = None
    fallback = ""
    if strategy in ("auto", "lifted"):
        plan = lift_or_compile(body, answer_vars, chi, model, index, probabilistic)
        if isinstance(plan, SafePlan):
            try:
                return InferenceResult(eval_safe_plan(plan, model, index), "lifted", plan)
            except InternalIndependenceViolation as exc:
                fallback = str(exc)
        else:
            witness = plan
        if strategy == "lifted":
            raise ValueError(str(witness or fallback))
    table = build_provenance(body, answer_vars, model, index, chi)
    circuit = EventCircuit(index, circuit_cap)
    probs = compile_and_count(table, index, circuit=circuit)
    return InferenceResult(
        {k: p for k, p in probs.items() if p > 0.0},
        "compiled",
        None,
        witness,
        circuit.nodes,
        circuit.cache_hits,
        fallback,
    )


def marginal_answers(body, answer_vars, model: Mapping, index: ChoiceIndex, chi: Iterable = (),
                     probabilistic: Iterable[str] = (), circuit_cap: int = 10**7) -> dict:
    return infer(body, answer_vars, model, index, chi, probabilistic, circuit_cap).answers


@dataclass
class ConditionalResult:
    answers: dict
    dropped: int
    numerator: InferenceResult
    denominator: InferenceResult
    condition_vars: tuple = field(default=())

    @property
    def strategy(self) -> str:
        a, b = self.numerator.strategy, self.denominator.strategy
        return a if a == b else f"{a}/{b}"

    def describe(self) -> str:
        return (
            "numerator: " + self.numerator.describe()
            + "\ndenominator: " + self.denominator.describe()
            + f"\ndropped (zero condition): {self.dropped}"
        )


def infer_conditional(answer_vars, body, given, model: Mapping, index: ChoiceIndex,
                      chi: Iterable = (), probabilistic: Iterable[str] = (),
                      circuit_cap: int = 10**7, strategy: str = "auto") -> ConditionalResult:
    """Pr(body ∧ given) / Pr(given) per answer tuple.

    Variables shared by the two sides are joined in the numerator; the
    denominator quantifies the condition's variables that are not answer
    variables existentially.
    """
    answer_vars, body, given = tuple(answer_vars), tuple(body), tuple(given)
    given_vars = body_variables(given)
    cond_vars = tuple(v for v in answer_vars if v in given_vars)
    num = infer(body + given, answer_vars, model, index, chi, probabilistic, circuit_cap, strategy)
    den = infer(given, cond_vars, model, index, chi, probabilistic, circuit_cap, strategy)
    positions = [answer_vars.index(v) for v in cond_vars]
    out, dropped = {}, 0
    for t, n in num.answers.items():
        d = den.answers.get(tuple(t[i] for i in positions), 0.0)
        if d <= 0.0:
            dropped += 1
            continue
        out[t] = n / d
    return ConditionalResult(out, dropped, num, den, cond_vars)
