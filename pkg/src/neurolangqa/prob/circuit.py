"""Exact weighted model counting by multi-way Shannon expansion.

Each decision node branches on one choice: one branch per alternative that
occurs in the residual expression plus a single branch for "any other
outcome" (remaining alternatives and ⊥), which is equivalent to branching on
each of them separately because the expression does not distinguish them.
Sub-expressions over disjoint sets of choices are counted independently.
"""
from __future__ import annotations

import math
import sys
import threading
from math import fsum
from typing import Mapping

from .events import FALSE, TRUE, ChoiceIndex, Expr, conj, disj, neg


class CircuitBudgetExceeded(RuntimeError):
    pass


def _components(children) -> list[list[Expr]]:
    parent = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner = {}
    kids = list(children)
    for i in range(len(kids)):
        parent[i] = i
    for i, e in enumerate(kids):
        for c in e.support:
            j = owner.setdefault(c, i)
            if j != i:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    groups = {}
    for i, e in enumerate(kids):
        groups.setdefault(find(i), []).append(e)
    return list(groups.values())


class EventCircuit:
    """Memoized decision circuit; one instance may count many expressions."""

    def __init__(self, index: ChoiceIndex, node_cap: int = 10**7):
        self.index = index
        self.node_cap = node_cap
        self.memo: dict[Expr, float] = {}
        self.nodes = 0
        self.decisions = 0
        self.cache_hits = 0

    def probability(self, e: Expr) -> float:
        return self._prob(e)

    def _new_node(self):
        self.nodes += 1
        if self.nodes > self.node_cap:
            raise CircuitBudgetExceeded(f"event circuit exceeded {self.node_cap} nodes")

    def _prob(self, e: Expr) -> float:
        if e is TRUE:
            return 1.0
        if e is FALSE:
            return 0.0
        cached = self.memo.get(e)
        if cached is not None:
            self.cache_hits += 1
            return cached
        self._new_node()
        k = e.kind
        if k == "lit":
            p = self.index.weight(e.choice, e.alt)
        elif k == "not":
            p = 1.0 - self._prob(next(iter(e.children)))
        else:
            groups = _components(e.children)
            if len(groups) > 1:
                build = conj if k == "and" else disj
                parts = [self._prob(build(g)) for g in groups]
                if k == "and":
                    p = math.prod(parts)
                else:
                    p = 1.0 - math.prod(1.0 - q for q in parts)
            else:
                p = self._expand(e)
        self.memo[e] = p
        return p

    def _pick(self, e: Expr) -> int:
        counts = {}
        for child in e.children:
            for c in child.support:
                counts[c] = counts.get(c, 0) + 1
        return min(counts, key=lambda c: (-counts[c], c))

    def _expand(self, e: Expr) -> float:
        self.decisions += 1
        c = self._pick(e)
        alts = sorted(_alternatives(e, c))
        weights = self.index.weights[c]
        terms = []
        for i in alts:
            w = self.index.weight(c, i)
            if w > 0.0:
                terms.append(w * self._prob(condition(e, c, i)))
        other = fsum([w for j, w in enumerate(weights) if j not in alts] + [self.index.bottoms[c]])
        if other > 0.0:
            terms.append(other * self._prob(condition(e, c, None)))
        return fsum(terms)


def _alternatives(e: Expr, c: int) -> set:
    out = set()
    stack = [e]
    seen = set()
    while stack:
        x = stack.pop()
        if x in seen or c not in x.support:
            continue
        seen.add(x)
        if x.kind == "lit":
            out.add(x.alt)
        else:
            stack.extend(x.children)
    return out


def condition(e: Expr, c: int, alt: int | None, memo: dict | None = None) -> Expr:
    """Restrict ``e`` to worlds where choice ``c`` took ``alt`` (None: none of the mentioned ones)."""
    if c not in e.support:
        return e
    if memo is None:
        memo = {}
    got = memo.get(e)
    if got is not None:
        return got
    k = e.kind
    if k == "lit":
        out = TRUE if e.alt == alt else FALSE
    elif k == "not":
        out = neg(condition(next(iter(e.children)), c, alt, memo))
    elif k == "and":
        out = conj(condition(x, c, alt, memo) for x in e.children)
    else:
        out = disj(condition(x, c, alt, memo) for x in e.children)
    memo[e] = out
    return out


def compile_and_count(table: Mapping, index: ChoiceIndex, node_cap: int = 10**7,
                      circuit: EventCircuit | None = None) -> dict:
    """Probability of each row's event expression."""
    circuit = circuit or EventCircuit(index, node_cap)
    return run_deep(lambda: {key: circuit.probability(e) for key, e in table.items()})


def run_deep(fn, depth: int = 200000, stack_bytes: int = 512 * 1024 * 1024):
    """Run ``fn`` in a thread with a large stack so deep expansions do not overflow."""
    result = {}

    def target():
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, depth))
        try:
            result["value"] = fn()
        except BaseException as exc:  # re-raised in the caller's thread
            result["error"] = exc
        finally:
            sys.setrecursionlimit(old)

    previous = threading.stack_size()
    threading.stack_size(stack_bytes)
    try:
        worker = threading.Thread(target=target)
        worker.start()
    finally:
        threading.stack_size(previous)
    worker.join()
    if "error" in result:
        raise result["error"]
    return result["value"]
