"""A* search over grounded STRIPS tasks."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Callable

from planhrl.planning import GroundOperator, PlanningTask

DEFAULT_NODE_BUDGET = 1_000_000


@dataclass(frozen=True)
class Plan:
    operators: tuple[GroundOperator, ...]

    @property
    def cost(self) -> int:
        return len(self.operators)

    @property
    def names(self) -> list[str]:
        return [o.name for o in self.operators]

    def __len__(self) -> int:
        return len(self.operators)


class NodeBudgetExceeded(RuntimeError):
    def __init__(self, expansions: int):
        self.expansions = expansions
        super().__init__(f"node budget exhausted after {expansions} expansions")


def goal_count(state: frozenset[int], goal: frozenset[int]) -> int:
    return len(goal - state)


def hadd(state: frozenset[int], task: PlanningTask, goal: frozenset[int] | None = None) -> float:
    """Additive delete-relaxation estimate; ``inf`` when the relaxed goal is unreachable."""
    goal = task.goal if goal is None else goal
    cost = {f: 0 for f in state}
    changed = True
    while changed:
        changed = False
        for op in task.operators:
            try:
                c = 1 + sum(cost[f] for f in op.pre)
            except KeyError:
                continue
            for f in op.add:
                if c < cost.get(f, math.inf):
                    cost[f] = c
                    changed = True
    total = 0
    for f in goal:
        if f not in cost:
            return math.inf
        total += cost[f]
    return total


HEURISTICS = ("blind", "goal-count", "hadd")


def _heuristic(name: str, task: PlanningTask, goal: frozenset[int]) -> Callable[[frozenset[int]], float]:
    if name == "blind":
        return lambda s: 0
    if name == "goal-count":
        return lambda s: len(goal - s)
    if name == "hadd":
        return lambda s: hadd(s, task, goal)
    raise ValueError(f"unknown heuristic {name!r}; choose from {HEURISTICS}")


def astar(
    task: PlanningTask,
    start: frozenset[int] | None = None,
    heuristic: str = "blind",
    node_budget: int = DEFAULT_NODE_BUDGET,
    goal: frozenset[int] | None = None,
) -> Plan | None:
    """Return a plan from ``start`` (default ``task.init``) or ``None`` if unsolvable.

    Open-list ties on f are broken by lower h, then by the sorted fact-id vector of
    the state, then by insertion order, so results do not depend on hash seeds.
    Optimal for ``blind``; ``goal-count`` and ``hadd`` are not admissible in general.
    """
    start = task.init if start is None else frozenset(start)
    goal = task.goal if goal is None else frozenset(goal)
    h = _heuristic(heuristic, task, goal)
    counter = itertools.count()
    h0 = h(start)
    if h0 == math.inf:
        return None
    open_list = [(h0, h0, tuple(sorted(start)), next(counter), start)]
    best_g = {start: 0}
    parent: dict[frozenset[int], tuple[frozenset[int], GroundOperator] | None] = {start: None}
    closed: set[frozenset[int]] = set()
    expansions = 0
    while open_list:
        f, _, _, _, state = heapq.heappop(open_list)
        if state in closed:
            continue
        g = best_g[state]
        if goal <= state:
            return Plan(_extract(parent, state))
        closed.add(state)
        expansions += 1
        if expansions > node_budget:
            raise NodeBudgetExceeded(expansions - 1)
        for op in task.operators:
            if not op.pre <= state:
                continue
            succ = (state - op.delete) | op.add
            ng = g + 1
            if succ in closed or ng >= best_g.get(succ, math.inf):
                continue
            hs = h(succ)
            if hs == math.inf:
                continue
            best_g[succ] = ng
            parent[succ] = (state, op)
            heapq.heappush(open_list, (ng + hs, hs, tuple(sorted(succ)), next(counter), succ))
    return None


def _extract(parent, state) -> tuple[GroundOperator, ...]:
    ops = []
    while parent[state] is not None:
        state, op = parent[state]
        ops.append(op)
    return tuple(reversed(ops))
