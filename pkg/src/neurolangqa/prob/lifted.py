"""Safe-plan (lifted) evaluation of queries over probabilistic choices.

The query body is first unfolded through the probabilistic rules into a union
of conjunctive queries over base predicates. Each conjunctive query is planned
recursively: atoms that cannot hold together collapse by exclusivity, parts
that share no choices become independent joins, and a variable is projected
either by summation (it pins an atom whose facts all lie in one choice, so
its groundings are mutually exclusive) or by the independent-or rule (it
occurs in every probabilistic atom and no choice spans two of its values).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from math import fsum
from typing import Iterable, Mapping

from ..datalog import match_body
from ..logic import (
    Atom,
    Constant,
    Variable,
    body_variables,
    substitute,
)
from .events import ChoiceIndex


class InternalIndependenceViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class NotLiftable:
    reason: str
    witness: tuple = ()

    def __str__(self) -> str:
        parts = ", ".join(map(str, self.witness))
        return f"not liftable: {self.reason}" + (f" [{parts}]" if parts else "")


class _Fail(Exception):
    def __init__(self, result: NotLiftable):
        self.result = result


DET_SUFFIX = "\x00det"
MAX_UNFOLDED = 256


# -- plan nodes --------------------------------------------------------------


class Node:
    vars: tuple = ()

    def render(self, indent: int = 0) -> list[str]:
        pad = "  " * indent
        lines = [pad + self.label()]
        for c in self.children():
            lines.extend(c.render(indent + 1))
        return lines

    def children(self) -> tuple:
        return ()

    def label(self) -> str:
        return type(self).__name__


@dataclass(eq=False)
class Zero(Node):
    vars: tuple
    note: str = ""

    def label(self):
        return f"empty({self.note})"


@dataclass(eq=False)
class ChoiceScan(Node):
    atom: Atom
    vars: tuple

    def label(self):
        return f"choice-scan {self.atom}"


@dataclass(eq=False)
class DeterministicScan(Node):
    body: tuple
    vars: tuple

    def label(self):
        return "deterministic-scan " + ", ".join(map(str, self.body))


@dataclass(eq=False)
class Selection(Node):
    child: Node
    filters: tuple
    vars: tuple = ()

    def __post_init__(self):
        self.vars = self.child.vars

    def children(self):
        return (self.child,)

    def label(self):
        return "selection " + ", ".join(map(str, self.filters))


@dataclass(eq=False)
class IndependentJoin(Node):
    parts: tuple
    vars: tuple = ()

    def __post_init__(self):
        out = []
        for p in self.parts:
            for v in p.vars:
                if v not in out:
                    out.append(v)
        self.vars = tuple(out)

    def children(self):
        return self.parts

    def label(self):
        return "independent-join"


@dataclass(eq=False)
class IndependentProject(Node):
    child: Node
    projected: tuple
    exclusive: bool
    atoms: tuple = ()  # probabilistic atoms for the independence check
    vars: tuple = ()

    def __post_init__(self):
        self.vars = tuple(v for v in self.child.vars if v not in self.projected)

    def children(self):
        return (self.child,)

    def label(self):
        names = ", ".join(map(str, self.projected))
        mode = "exclusive sum" if self.exclusive else "1-prod(1-p)"
        return f"independent-project {names} ({mode})"


@dataclass(eq=False)
class Bind(Node):
    """Adds columns fixed to a constant or copied from another column."""

    child: Node
    mapping: tuple  # ((Variable, term), ...)
    vars: tuple = ()

    def __post_init__(self):
        self.vars = self.child.vars + tuple(v for v, _ in self.mapping if v not in self.child.vars)

    def children(self):
        return (self.child,)

    def label(self):
        return "bind " + ", ".join(f"{v}={t}" for v, t in self.mapping)


@dataclass(eq=False)
class Answer(Node):
    """Maps a conjunctive query's columns onto the answer tuple."""

    child: Node
    template: tuple

    def children(self):
        return (self.child,)

    def label(self):
        return "answer (" + ", ".join(map(str, self.template)) + ")"


@dataclass(eq=False)
class IndependentUnion(Node):
    parts: tuple

    def children(self):
        return self.parts

    def label(self):
        return "independent-union"


@dataclass
class SafePlan:
    root: Node
    answer_vars: tuple

    def __str__(self) -> str:
        return "\n".join(self.root.render())


# -- unfolding ---------------------------------------------------------------


@dataclass(frozen=True)
class CQ:
    atoms: tuple
    filters: tuple
    template: tuple


class _Fresh:
    def __init__(self):
        self.n = 0

    def __call__(self) -> Variable:
        self.n += 1
        return Variable(f"_L{self.n}")


def _unify(pairs, protected: set) -> dict | None:
    parent = {}

    def find(t):
        parent.setdefault(t, t)
        while parent[t] != t:
            parent[t] = parent[parent[t]]
            t = parent[t]
        return t

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        if isinstance(ra, Constant) and isinstance(rb, Constant):
            return None
        parent[ra] = rb
    classes = {}
    for t in list(parent):
        classes.setdefault(find(t), []).append(t)
    theta = {}
    for members in classes.values():
        consts = [m for m in members if isinstance(m, Constant)]
        if consts:
            rep = consts[0]
        else:
            mine = sorted((m for m in members if m in protected), key=lambda v: v.name)
            rep = mine[0] if mine else sorted(members, key=lambda v: v.name)[0]
        for m in members:
            if isinstance(m, Variable) and m != rep:
                theta[m] = rep
    return theta


def _apply(cq: CQ, theta: dict) -> CQ:
    return CQ(
        tuple(substitute(a, theta) for a in cq.atoms),
        tuple(substitute(f, theta) for f in cq.filters),
        tuple(theta.get(t, t) if isinstance(t, Variable) else t for t in cq.template),
    )


def unfold(body, answer_vars, chi, model: Mapping) -> list[CQ]:
    """Expand probabilistic rule heads in ``body`` into a union of base queries."""
    by_head = {}
    for r in chi:
        by_head.setdefault(r.head.predicate, []).append(r)
    atoms = tuple(l for l in body if isinstance(l, Atom))
    filters = tuple(l for l in body if not isinstance(l, Atom))
    queue = [CQ(atoms, filters, tuple(answer_vars))]
    done = []
    fresh = _Fresh()
    protected = set(answer_vars)
    while queue:
        cq = queue.pop()
        pos = next((i for i, a in enumerate(cq.atoms) if a.predicate in by_head), None)
        if pos is None:
            done.append(cq)
            if len(done) > MAX_UNFOLDED:
                raise _Fail(NotLiftable("unfolding exceeds the size limit"))
            continue
        target = cq.atoms[pos]
        rest = cq.atoms[:pos] + cq.atoms[pos + 1:]
        if model.get(target.predicate):
            alias = Atom(target.predicate + DET_SUFFIX, target.args)
            queue.append(CQ(rest + (alias,), cq.filters, cq.template))
        for rule in by_head[target.predicate]:
            vs = body_variables(rule.body) | rule.head.variables()
            ren = {v: fresh() for v in sorted(vs, key=lambda v: v.name)}
            head = substitute(rule.head, ren)
            theta = _unify(zip(target.args, head.args), protected | _cq_vars(cq))
            if theta is None:
                continue
            new_atoms = rest + tuple(l for l in (substitute(b, ren) for b in rule.body) if isinstance(l, Atom))
            new_filters = cq.filters + tuple(l for l in (substitute(b, ren) for b in rule.body) if not isinstance(l, Atom))
            queue.append(_apply(CQ(new_atoms, new_filters, cq.template), theta))
            if len(queue) + len(done) > MAX_UNFOLDED:
                raise _Fail(NotLiftable("unfolding exceeds the size limit"))
    return [CQ(tuple(dict.fromkeys(c.atoms)), tuple(dict.fromkeys(c.filters)), c.template) for c in done]


def _cq_vars(cq: CQ) -> set:
    out = set()
    for a in cq.atoms:
        out |= a.variables()
    return out


# -- planning ----------------------------------------------------------------


class Planner:
    def __init__(self, index: ChoiceIndex, probabilistic: Iterable[str]):
        self.index = index
        self.prob = set(probabilistic) | set(index.by_predicate)

    def is_prob(self, atom: Atom) -> bool:
        return atom.predicate in self.prob

    def support(self, atom: Atom) -> frozenset:
        return self.index.predicate_choices(atom.predicate)

    def single_choice(self, atom: Atom) -> bool:
        return len(self.support(atom)) == 1

    def plan(self, cq: CQ) -> Node:
        kept = tuple(dict.fromkeys(t for t in cq.template if isinstance(t, Variable)))
        node = self.plan_conjunction(cq.atoms, cq.filters, kept)
        return Answer(node, cq.template)

    def plan_conjunction(self, atoms: tuple, filters: tuple, kept: tuple) -> Node:
        kept_set = set(kept)
        # exclusivity: atoms over one shared choice must be the same fact
        binding = {}
        changed = True
        while changed:
            changed = False
            probs = [a for a in atoms if self.is_prob(a)]
            for a in probs:
                if not self.support(a):
                    return Zero(kept, f"no facts for {a.predicate}")
            for i, a in enumerate(probs):
                for b in probs[i + 1:]:
                    if a == b or not (self.single_choice(a) and self.single_choice(b)):
                        continue
                    if self.support(a) != self.support(b):
                        continue
                    if a.predicate != b.predicate or a.arity != b.arity:
                        return Zero(kept, f"{a} and {b} exclude each other")
                    theta = _unify(zip(a.args, b.args), kept_set)
                    if theta is None:
                        return Zero(kept, f"{a} and {b} exclude each other")
                    atoms = tuple(dict.fromkeys(substitute(x, theta) for x in atoms))
                    filters = tuple(dict.fromkeys(substitute(f, theta) for f in filters))
                    for v, t in theta.items():
                        if v in kept_set:
                            binding[v] = t
                    binding = {v: theta.get(t, t) if isinstance(t, Variable) else t for v, t in binding.items()}
                    changed = True
                    break
                if changed:
                    break
        if binding:
            inner_kept = tuple(dict.fromkeys(
                [v for v in kept if v not in binding]
                + [t for t in binding.values() if isinstance(t, Variable)]
            ))
            inner = self.plan_conjunction(atoms, filters, inner_kept)
            return Bind(inner, tuple(sorted(binding.items(), key=lambda vt: vt[0].name)))

        post = tuple(f for f in filters if body_variables([f]) <= kept_set)
        local = tuple(f for f in filters if not body_variables([f]) <= kept_set)
        components = self._components(atoms, local, kept_set)
        if len(components) > 1:
            parts = []
            for comp_atoms, comp_filters in components:
                vs = set()
                for x in comp_atoms + comp_filters:
                    vs |= body_variables([x])
                parts.append(self.plan_component(comp_atoms, comp_filters, tuple(v for v in kept if v in vs)))
            node = IndependentJoin(tuple(parts))
        elif components:
            node = self.plan_component(components[0][0], components[0][1], kept)
        else:
            node = DeterministicScan((), ())
        return Selection(node, post) if post else node

    def _components(self, atoms, filters, kept: set) -> list[tuple[tuple, tuple]]:
        items = list(atoms) + list(filters)
        parent = list(range(len(items)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        def union(i, j):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj

        owner = {}
        for i, x in enumerate(items):
            for v in body_variables([x]) - kept:
                union(i, owner.setdefault(v, i))
            if isinstance(x, Atom) and self.is_prob(x):
                for c in self.support(x):
                    union(i, owner.setdefault(("choice", c), i))
        groups = {}
        for i, x in enumerate(items):
            groups.setdefault(find(i), []).append(x)
        out = []
        for members in groups.values():
            out.append((
                tuple(m for m in members if isinstance(m, Atom)),
                tuple(m for m in members if not isinstance(m, Atom)),
            ))
        return out

    def plan_component(self, atoms: tuple, filters: tuple, kept: tuple) -> Node:
        probs = [a for a in atoms if self.is_prob(a)]
        if not probs:
            return DeterministicScan(atoms + filters, kept)
        kept_set = set(kept)
        vs = set()
        for x in atoms + filters:
            vs |= body_variables([x])
        free = vs - kept_set
        if not free:
            if len(atoms) == 1 and not filters:
                return ChoiceScan(atoms[0], kept)
            a, b = probs[0], probs[1] if len(probs) > 1 else atoms[-1]
            raise _Fail(NotLiftable("atoms share choices without a separating variable", (a, b)))

        exclusive = sorted(
            {v for a in probs if self.single_choice(a) for v in a.variables() if v in free},
            key=lambda v: v.name,
        )
        common = set(free)
        for a in probs:
            common &= a.variables()
        failure = None
        for v in exclusive:
            try:
                child = self.plan_conjunction(atoms, filters, kept + (v,))
                return IndependentProject(child, (v,), True)
            except _Fail as exc:
                failure = exc
        if common:
            root = tuple(sorted(common, key=lambda v: v.name))
            try:
                child = self.plan_conjunction(atoms, filters, kept + root)
                return IndependentProject(child, root, False, tuple(probs))
            except _Fail as exc:
                failure = exc
        if failure is not None:
            raise failure
        raise _Fail(NotLiftable("no root variable covers every probabilistic atom", _witness(probs, free)))


def _witness(probs, free) -> tuple:
    """Two atoms and a variable in one but not the other."""
    for a in probs:
        for b in probs:
            if a is not b:
                for v in sorted(a.variables() & free, key=lambda v: v.name):
                    if v not in b.variables():
                        return (a, b, v)
    return tuple(probs[:2])


def _signature(cq: CQ) -> str:
    """Exact rendering of ``cq`` with variables renamed by first occurrence."""
    items = sorted(cq.atoms + cq.filters, key=lambda x: str(substitute(x, _anonymous(x))))
    theta = {}
    for t in cq.template:
        if isinstance(t, Variable) and t not in theta:
            theta[t] = Variable(f"A{len(theta)}")
    for x in items:
        for v in _ordered_vars(x):
            if v not in theta:
                theta[v] = Variable(f"V{len(theta)}")
    body = sorted(str(substitute(x, theta)) for x in items)
    head = ",".join(str(theta.get(t, t)) for t in cq.template)
    return "|".join(body) + "=>" + head


def _anonymous(x) -> dict:
    return {v: Variable("_") for v in body_variables([x])}


def _ordered_vars(x) -> list:
    if isinstance(x, Atom):
        return [t for t in x.args if isinstance(t, Variable)]
    return sorted(body_variables([x]), key=lambda v: v.name)


def lift_or_compile(body, answer_vars, chi, model: Mapping, index: ChoiceIndex,
                    probabilistic: Iterable[str] = ()):
    """Return a :class:`SafePlan` when the query is liftable, else :class:`NotLiftable`."""
    try:
        cqs = unfold(body, answer_vars, chi, model)
        planner = Planner(index, probabilistic)
        unique = {}
        for cq in cqs:
            unique.setdefault(_signature(cq), cq)
        cqs = list(unique.values())
        if not cqs:
            return SafePlan(Zero(tuple(answer_vars), "no derivations"), tuple(answer_vars))
        plans = [planner.plan(cq) for cq in cqs]
        if len(plans) == 1:
            return SafePlan(plans[0], tuple(answer_vars))
        supports = []
        for cq in cqs:
            s = frozenset()
            for a in cq.atoms:
                if planner.is_prob(a):
                    s |= planner.support(a)
            supports.append(s)
        for i in range(len(supports)):
            for j in range(i + 1, len(supports)):
                if supports[i] & supports[j]:
                    return NotLiftable(
                        "union of derivations over shared choices",
                        (" ∧ ".join(map(str, cqs[i].atoms)), " ∧ ".join(map(str, cqs[j].atoms))),
                    )
        return SafePlan(IndependentUnion(tuple(plans)), tuple(answer_vars))
    except _Fail as exc:
        return exc.result


# -- evaluation --------------------------------------------------------------


class _Evaluator:
    def __init__(self, model: Mapping, index: ChoiceIndex):
        self.index = index
        self.model = _DetView(model)

    def run(self, node: Node) -> dict:
        method = getattr(self, "eval_" + type(node).__name__)
        return method(node)

    def eval_Zero(self, node):
        return {}

    def eval_ChoiceScan(self, node: ChoiceScan):
        out = {}
        for row, _, _, p in self.index.by_predicate.get(node.atom.predicate, ()):
            b = _match_row(node.atom.args, row)
            if b is not None:
                out[tuple(b[v] for v in node.vars)] = p
        return out

    def eval_DeterministicScan(self, node: DeterministicScan):
        if not node.body:
            return {(): 1.0}
        return {tuple(b[v] for v in node.vars): 1.0 for b in match_body(node.body, self.model)}

    def eval_Selection(self, node: Selection):
        table = self.run(node.child)
        out = {}
        for key, p in table.items():
            binding = dict(zip(node.vars, key))
            if next(iter(match_body(node.filters, self.model, binding)), None) is not None:
                out[key] = p
        return out

    def eval_IndependentJoin(self, node: IndependentJoin):
        parts = sorted(((self.run(c), c.vars) for c in node.parts), key=lambda tv: len(tv[0]))
        table, vars_ = parts[0]
        for other, ovars in parts[1:]:
            table, vars_ = _hash_join(table, vars_, other, ovars)
            if not table:
                break
        order = [vars_.index(v) for v in node.vars] if table else []
        return {tuple(k[i] for i in order): p for k, p in table.items()}

    def eval_IndependentProject(self, node: IndependentProject):
        if not node.exclusive:
            self._check_independent(node)
        table = self.run(node.child)
        cvars = node.child.vars
        keep = [cvars.index(v) for v in node.vars]
        groups = {}
        for key, p in table.items():
            groups.setdefault(tuple(key[i] for i in keep), []).append(p)
        if node.exclusive:
            return {k: fsum(ps) for k, ps in groups.items()}
        return {k: 1.0 - math.prod(1.0 - p for p in ps) for k, ps in groups.items()}

    def _check_independent(self, node: IndependentProject):
        seen = {}
        for atom in node.atoms:
            positions = [[i for i, t in enumerate(atom.args) if t == v] for v in node.projected]
            for row, c, _, _ in self.index.by_predicate.get(atom.predicate, ()):
                if _match_row(atom.args, row) is None:
                    continue
                value = tuple(row[ps[0]] for ps in positions)
                prior = seen.setdefault(c, value)
                if prior != value:
                    raise InternalIndependenceViolation(
                        f"choice {self.index.choices[c].id or c} holds facts for two values of "
                        + ", ".join(map(str, node.projected))
                    )

    def eval_Bind(self, node: Bind):
        table = self.run(node.child)
        cvars = node.child.vars
        out = {}
        extra = [(v, t) for v, t in node.mapping if v not in cvars]
        for key, p in table.items():
            b = dict(zip(cvars, key))
            ok = True
            for v, t in node.mapping:
                val = t.value if isinstance(t, Constant) else b[t]
                if v in b and b[v] != val:
                    ok = False
                    break
            if not ok:
                continue
            out[key + tuple(t.value if isinstance(t, Constant) else b[t] for v, t in extra)] = p
        return out

    def eval_Answer(self, node: Answer):
        table = self.run(node.child)
        cvars = node.child.vars
        out = {}
        for key, p in table.items():
            b = dict(zip(cvars, key))
            out[tuple(t.value if isinstance(t, Constant) else b[t] for t in node.template)] = p
        return out

    def eval_IndependentUnion(self, node: IndependentUnion):
        groups = {}
        for part in node.parts:
            for k, p in self.run(part).items():
                groups.setdefault(k, []).append(p)
        return {k: 1.0 - math.prod(1.0 - p for p in ps) for k, ps in groups.items()}


class _DetView(dict):
    """Deterministic relations, with aliases for derived facts already in the model."""

    def __init__(self, model: Mapping):
        super().__init__(model)
        self._base = model

    def __missing__(self, key):
        if key.endswith(DET_SUFFIX):
            return self._base.get(key[: -len(DET_SUFFIX)], frozenset())
        raise KeyError(key)

    def get(self, key, default=None):
        try:
            return self[key]
        except KeyError:
            return default


def _match_row(args, row):
    binding = {}
    for t, value in zip(args, row):
        if isinstance(t, Constant):
            if t.value != value:
                return None
        elif isinstance(t, Variable):
            prior = binding.setdefault(t, value)
            if prior != value:
                return None
    return binding


def _hash_join(left: dict, lvars: tuple, right: dict, rvars: tuple):
    shared = [v for v in lvars if v in rvars]
    li = [lvars.index(v) for v in shared]
    ri = [rvars.index(v) for v in shared]
    extra = [i for i, v in enumerate(rvars) if v not in lvars]
    index = {}
    for key, p in right.items():
        index.setdefault(tuple(key[i] for i in ri), []).append((key, p))
    out = {}
    for key, p in left.items():
        for rkey, q in index.get(tuple(key[i] for i in li), ()):
            out[key + tuple(rkey[i] for i in extra)] = p * q
    return out, lvars + tuple(rvars[i] for i in extra)


def eval_safe_plan(plan: SafePlan, model: Mapping, index: ChoiceIndex) -> dict:
    """Answer tuple -> probability for a plan from :func:`lift_or_compile`."""
    table = _Evaluator(model, index).run(plan.root)
    return {k: p for k, p in table.items() if p > 0.0}
