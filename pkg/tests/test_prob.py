import math
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurolangqa.logic import Atom, Constant, ProbChoice, Variable
from neurolangqa.parser import parse_program, parse_query
from neurolangqa.prob import (
    CapExceeded,
    ChoiceIndex,
    EventCircuit,
    InternalIndependenceViolation,
    NotLiftable,
    SafePlan,
    build_provenance,
    compile_and_count,
    eval_safe_plan,
    infer,
    lift_or_compile,
    marginal_answers,
    oracle_answers,
    total_choices,
)
from neurolangqa.prob.events import FALSE, TRUE, conj, disj, lit, neg

from oracles import brute_force_answers

X, Y, Z, S = (Variable(n) for n in "XYZS")


def A(p, *args):
    return Atom(p, tuple(a if isinstance(a, Variable) else Constant(a) for a in args))


def det_model(program):
    out = {}
    for a in program.facts + program.ontology_facts:
        out.setdefault(a.predicate, set()).add(a.values())
    return out


def close(got: dict, expected: dict, tol=1e-9):
    assert set(got) == set(expected), (got, expected)
    for k in expected:
        assert abs(got[k] - expected[k]) <= tol, (k, got[k], expected[k])


# -- total choices -----------------------------------------------------------

EXAMPLE3 = [0.084, 0.036, 0.196, 0.084, 0.021, 0.009, 0.049, 0.021, 0.105, 0.045, 0.245, 0.105]


def test_total_choices_example(example5):
    rows = list(total_choices(example5.choices))
    assert len(rows) == 12
    assert math.isclose(math.fsum(p for _, p in rows), 1.0, abs_tol=1e-12)
    assert sorted(round(p, 12) for _, p in rows) == sorted(EXAMPLE3)
    # λ₁ = s(a,b), s(b,c), r(b)
    by_sel = {sel: p for sel, p in rows}
    assert math.isclose(by_sel[(0, 0, 0)], 0.084)


def test_total_choices_rows_by_assignment(example5):
    names = {0: "s_ab", 1: "s_bc", 2: "r"}
    weights = {0: {0: 0.3, None: 0.7}, 1: {0: 0.7, None: 0.3}, 2: {0: 0.4, 1: 0.1, None: 0.5}}
    rows = list(total_choices(example5.choices))
    assert len({sel for sel, _ in rows}) == 12
    for sel, p in rows:
        expected = math.prod(weights[j][i] for j, i in enumerate(sel))
        assert math.isclose(p, expected, rel_tol=1e-12), names


def test_total_choices_empty():
    assert list(total_choices(())) == [((), 1.0)]


def test_total_choices_cap():
    cs = [ProbChoice(((A("c", i), 0.5),)) for i in range(30)]
    with pytest.raises(CapExceeded):
        next(total_choices(cs, cap=1000))


def test_total_choices_speed(example5):
    t = time.perf_counter()
    for _ in range(100):
        list(total_choices(example5.choices))
    assert (time.perf_counter() - t) / 100 < 0.01


# -- oracle ------------------------------------------------------------------


def test_oracle_examples(example5):
    m = det_model(example5)
    chi = example5.chi
    close(oracle_answers([A("w", X, Y)], (X, Y), m, example5.choices, chi),
          {("a", "b"): 0.12, ("b", "c"): 0.07}, 1e-12)
    close(oracle_answers([A("r", X)], (X,), m, example5.choices, chi), {("b",): 0.4, ("c",): 0.1}, 1e-12)
    m["t"] = {("a",)}
    assert math.isclose(oracle_answers([A("t", "a")], (), m, example5.choices, chi)[()], 1.0)


def test_engine_oracle_matches_test_oracle(example5):
    m = det_model(example5)
    body = [A("w", X, Y)]
    close(oracle_answers(body, (X,), m, example5.choices, example5.chi),
          brute_force_answers(body, (X,), m, example5.choices, example5.chi), 1e-12)


# -- provenance ---------------------------------------------------------------


def test_build_provenance_example(example5):
    index = ChoiceIndex(example5.choices)
    table = build_provenance([A("w", X, Y)], (X, Y), det_model(example5), index, example5.chi)
    s_ab, s_bc = index.expr_of(A("s", "a", "b")), index.expr_of(A("s", "b", "c"))
    r_b, r_c = index.expr_of(A("r", "b")), index.expr_of(A("r", "c"))
    assert table == {("a", "b"): conj([s_ab, r_b]), ("b", "c"): conj([s_bc, r_c])}


def test_provenance_deterministic_rows_true():
    index = ChoiceIndex(())
    table = build_provenance([A("e", X, Y)], (X,), {"e": {(1, 2), (2, 3)}}, index)
    assert table == {(1,): TRUE, (2,): TRUE}


def test_provenance_self_join_idempotent():
    index = ChoiceIndex([ProbChoice(((A("p", "a"), 0.3),))])
    table = build_provenance([A("p", X), A("p", X)], (X,), {}, index)
    assert table[("a",)] == index.expr_of(A("p", "a"))


# -- lifted plans ----------------------------------------------------------


def _rst(n, m, rng, density=0.7):
    choices = []
    for i in range(n):
        choices.append(ProbChoice(((A("R", i), rng.uniform(0.05, 0.95)),)))
    for j in range(m):
        choices.append(ProbChoice(((A("T", j), rng.uniform(0.05, 0.95)),)))
    for i in range(n):
        for j in range(m):
            if rng.random() < density:
                choices.append(ProbChoice(((A("Sx", i, j), rng.uniform(0.05, 0.95)),)))
    return choices


RST = [A("R", X), A("Sx", X, Y), A("T", Y)]


def test_rst_not_liftable():
    index = ChoiceIndex(_rst(2, 2, random.Random(0), density=1.0))
    plan = lift_or_compile(RST, (), (), {}, index, {"R", "Sx", "T"})
    assert isinstance(plan, NotLiftable)
    assert str(plan)


def test_rst_compiled_matches_oracle():
    rng = random.Random(5)
    for _ in range(20):
        choices = _rst(rng.randint(1, 4), rng.randint(1, 4), rng)
        choices = choices[:12]
        index = ChoiceIndex(choices)
        res = infer(RST, (), {}, index, (), {"R", "Sx", "T"})
        expected = brute_force_answers(RST, (), {}, choices)
        close(res.answers, expected, 1e-12)


def test_selected_study_liftable_exclusive_sum():
    studies = [f"s{i}" for i in range(1, 5)]
    choice = ProbChoice(tuple((A("SelectedStudy", s), 0.25) for s in studies))
    index = ChoiceIndex([choice])
    model = {"mentioned": {("s1",), ("s2",)}}
    body = [A("SelectedStudy", S), A("mentioned", S)]
    plan = lift_or_compile(body, (), (), model, index, {"SelectedStudy"})
    assert isinstance(plan, SafePlan)
    assert math.isclose(eval_safe_plan(plan, model, index)[()], 0.5, abs_tol=1e-15)


def test_term_in_study_liftable():
    choice = ProbChoice(tuple((A("SelectedStudy", s), 0.5) for s in ("s1", "s2")))
    index = ChoiceIndex([choice])
    model = {"TermInStudy": {("pain", "s1"), ("memory", "s2")}}
    plan = lift_or_compile([A("TermInStudy", "pain", S), A("SelectedStudy", S)], (), (), model, index,
                           {"SelectedStudy"})
    assert isinstance(plan, SafePlan)


def test_independent_union():
    program = parse_program("a(1) : 0.3.\nb(1) : 0.7.\nq(X) :- a(X).\nq(X) :- b(X).")
    index = ChoiceIndex(program.choices)
    e = disj([index.expr_of(A("a", 1)), index.expr_of(A("b", 1))])
    assert math.isclose(EventCircuit(index).probability(e), 0.79)
    res = infer([A("q", X)], (), {}, index, program.chi, {"a", "b"})
    assert res.strategy == "lifted"
    assert math.isclose(res.answers[()], 0.79)


def test_single_fact():
    index = ChoiceIndex([ProbChoice(((A("a"), 0.3),))])
    plan = lift_or_compile([A("a")], (), (), {}, index, {"a"})
    assert isinstance(plan, SafePlan)
    assert math.isclose(eval_safe_plan(plan, {}, index)[()], 0.3)


def test_independence_violation_is_an_exception():
    assert issubclass(InternalIndependenceViolation, RuntimeError)


# -- circuit ---------------------------------------------------------------


def test_compile_constants():
    index = ChoiceIndex(())
    assert compile_and_count({"t": TRUE, "f": FALSE}, index) == {"t": 1.0, "f": 0.0}


def test_compile_example(example5):
    index = ChoiceIndex(example5.choices)
    e = conj([index.expr_of(A("s", "a", "b")), index.expr_of(A("r", "b"))])
    assert math.isclose(compile_and_count({(): e}, index)[()], 0.12)


def test_exclusivity_exact_zero(example5):
    index = ChoiceIndex(example5.choices)
    e = conj([index.expr_of(A("r", "b")), index.expr_of(A("r", "c"))])
    assert compile_and_count({(): e}, index)[()] == 0.0
    other = conj([index.expr_of(A("r", "b")), index.expr_of(A("s", "a", "b"))])
    assert compile_and_count({(): other}, index)[()] > 0.0


def test_negated_literal_complement(example5):
    index = ChoiceIndex(example5.choices)
    e = neg(index.expr_of(A("r", "b")))
    assert math.isclose(compile_and_count({(): e}, index)[()], 0.6)


def test_circuit_budget():
    from neurolangqa.prob import CircuitBudgetExceeded

    cs = [ProbChoice(((A("a", i), 0.5),)) for i in range(12)] + [ProbChoice(((A("b", i), 0.5),)) for i in range(12)]
    index = ChoiceIndex(cs)
    e = disj([conj([lit(i, 0), lit(12 + (i + 1) % 12, 0)]) for i in range(12)])
    with pytest.raises(CircuitBudgetExceeded):
        compile_and_count({(): e}, index, node_cap=5)


# -- dispatcher --------------------------------------------------------------


def test_marginal_answers_examples(example5):
    m = det_model(example5)
    index = ChoiceIndex(example5.choices)
    rp = example5.probabilistic_predicates
    close(marginal_answers([A("w", X, Y)], (X,), m, index, example5.chi, rp), {("a",): 0.12, ("b",): 0.07})
    assert marginal_answers([A("t2", X)], (X,), m, index, example5.chi, rp) == {("a",): 1.0, ("b",): 1.0}
    assert marginal_answers([A("t2", "z")], (), m, index, example5.chi, rp) == {}


def test_normalization_single_choice(example5):
    index = ChoiceIndex(example5.choices)
    got = marginal_answers([A("r", X)], (X,), {}, index, (), {"r", "s"})
    bottom = index.bottoms[2]
    assert abs(math.fsum(got.values()) + bottom - 1.0) <= 1e-12


# -- random sweeps -----------------------------------------------------------

DOM = (0, 1, 2)
PROB_PREDS = (("c1", 1), ("c2", 2))
DET_PREDS = (("e1", 1), ("e2", 2))
VARS = ("X", "Y", "Z")


def _atom_text(rng, pred, arity, pool=VARS):
    args = [rng.choice(pool) if rng.random() < 0.8 else str(rng.choice(DOM)) for _ in range(arity)]
    return f"{pred}({', '.join(args)})" if arity else pred


def random_prob_program(rng):
    """Choices over c1/c2, deterministic e1/e2, and a layered χ over h0..h3."""
    lines = ["@probabilistic c1/1, c2/2"]
    atoms = [("c1", (d,)) for d in DOM] + [("c2", (a, b)) for a in DOM for b in DOM]
    rng.shuffle(atoms)
    atoms = atoms[: rng.randint(1, 10)]
    while atoms:
        k = rng.randint(1, min(3, len(atoms)))
        group, atoms = atoms[:k], atoms[k:]
        cuts = sorted(rng.random() for _ in range(k))
        if rng.random() < 0.3:
            cuts[-1] = 1.0
        ws = [round(b - a, 3) for a, b in zip([0.0] + cuts[:-1], cuts)]
        ws = [max(w, 0.001) for w in ws]
        if sum(ws) > 1.0:
            ws[-1] = round(ws[-1] - (sum(ws) - 1.0), 9)
        lines.append(" | ".join(f"{p}({', '.join(map(str, args))}) : {w!r}" for (p, args), w in zip(group, ws)) + ".")
    for _ in range(rng.randint(0, 25)):
        p, ar = rng.choice(DET_PREDS)
        lines.append(f"{p}({', '.join(str(rng.choice(DOM)) for _ in range(ar))}).")
    available = list(PROB_PREDS + DET_PREDS)
    for h in range(rng.randint(0, 4)):
        body = [_atom_text(rng, *rng.choice(available)) for _ in range(rng.randint(1, 3))]
        if not any(b.startswith(("c", "h")) for b in body):
            body[0] = _atom_text(rng, *rng.choice(PROB_PREDS))
        used = sorted({v for v in VARS if any(v in b for b in body)})
        head_vars = [v for v in used if rng.random() < 0.6][:2]
        head_args = head_vars or ["0"]
        lines.append(f"h{h}({', '.join(head_args)}) :- {', '.join(body)}.")
        available.append((f"h{h}", len(head_args)))
    query_preds = [p for p in available if p[0].startswith(("c", "h"))]
    qbody = [_atom_text(rng, *rng.choice(query_preds))]
    for _ in range(rng.randint(0, 2)):
        qbody.append(_atom_text(rng, *rng.choice(available)))
    return "\n".join(lines), ", ".join(qbody)


def _instance(rng):
    text, qtext = random_prob_program(rng)
    program = parse_program(text)
    query = parse_query(qtext, program)
    qvars = sorted({t for a in query.body for t in a.args if isinstance(t, Variable)}, key=lambda v: v.name)
    answer_vars = tuple(v for v in qvars if rng.random() < 0.5)
    return program, query.body, answer_vars


def test_oracle_equivalence_500_programs():
    rng = random.Random(20240601)
    start = time.perf_counter()
    strategies = set()
    for _ in range(500):
        program, body, answer_vars = _instance(rng)
        assert sum(len(c.alternatives) for c in program.choices) <= 10
        model = det_model(program)
        index = ChoiceIndex(program.choices)
        res = infer(body, answer_vars, model, index, program.chi, program.probabilistic_predicates)
        strategies.add(res.strategy)
        expected = brute_force_answers(body, answer_vars, model, program.choices, program.chi)
        close(res.answers, expected, 1e-9)
    assert strategies == {"lifted", "compiled"}
    assert time.perf_counter() - start < 60


def test_safe_plan_agrees_with_counting():
    rng = random.Random(99)
    lifted = 0
    for _ in range(300):
        program, body, answer_vars = _instance(rng)
        model = det_model(program)
        index = ChoiceIndex(program.choices)
        plan = lift_or_compile(body, answer_vars, program.chi, model, index, program.probabilistic_predicates)
        if not isinstance(plan, SafePlan):
            continue
        try:
            via_plan = eval_safe_plan(plan, model, index)
        except InternalIndependenceViolation:
            continue
        lifted += 1
        table = build_provenance(body, answer_vars, model, index, program.chi)
        counted = {k: p for k, p in compile_and_count(table, index).items() if p > 0}
        via_plan = {k: p for k, p in via_plan.items() if p > 0}
        close(via_plan, counted, 1e-9)
    assert lifted > 50


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**9))
def test_probabilities_in_unit_interval(seed):
    program, body, answer_vars = _instance(random.Random(seed))
    index = ChoiceIndex(program.choices)
    res = infer(body, answer_vars, det_model(program), index, program.chi, program.probabilistic_predicates)
    assert all(0.0 <= p <= 1.0 + 1e-12 for p in res.answers.values())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 0.5), min_size=1, max_size=4))
def test_alternatives_exclusive_and_normalized(ws):
    choice = ProbChoice(tuple((A("r", i), w / max(1.0, sum(ws) * 1.01)) for i, w in enumerate(ws)))
    index = ChoiceIndex([choice])
    got = marginal_answers([A("r", X)], (X,), {}, index, (), {"r"})
    assert abs(math.fsum(got.values()) + index.bottoms[0] - 1.0) <= 1e-12
    for i in range(len(ws)):
        for j in range(i + 1, len(ws)):
            e = conj([lit(0, i), lit(0, j)])
            assert compile_and_count({(): e}, index)[()] == 0.0
