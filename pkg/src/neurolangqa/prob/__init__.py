"""Probabilistic inference over annotated disjunctions."""
from .circuit import CircuitBudgetExceeded, EventCircuit, compile_and_count
from .events import ChoiceIndex, ChoiceVar
from .inference import InferenceResult, infer, infer_conditional, marginal_answers
from .lifted import InternalIndependenceViolation, NotLiftable, SafePlan, eval_safe_plan, lift_or_compile
from .provenance import ProvenanceTable, build_provenance
from .worlds import CapExceeded, oracle_answers, oracle_conditional, total_choices

__all__ = [
    "CapExceeded",
    "ChoiceIndex",
    "ChoiceVar",
    "CircuitBudgetExceeded",
    "EventCircuit",
    "InferenceResult",
    "InternalIndependenceViolation",
    "NotLiftable",
    "ProvenanceTable",
    "SafePlan",
    "build_provenance",
    "compile_and_count",
    "eval_safe_plan",
    "infer",
    "infer_conditional",
    "lift_or_compile",
    "marginal_answers",
    "oracle_answers",
    "oracle_conditional",
    "total_choices",
]
