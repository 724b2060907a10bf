"""STRIPS semantics over grounded tasks: applicability, progression, plans, transition graphs."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Hashable, Iterable, Sequence

State = frozenset  # of fact ids


@dataclass(frozen=True)
class GroundOperator:
    name: str
    pre: frozenset[int]
    add: frozenset[int]
    delete: frozenset[int]

    def __post_init__(self):
        if self.add & self.delete:
            raise ValueError(f"{self.name}: add and delete effects overlap")

    @property
    def prevail(self) -> frozenset[int]:
        """Preconditions the effect leaves untouched."""
        return self.pre - (self.add | self.delete)

    @property
    def effect(self) -> frozenset[int]:
        return self.add | self.delete


@dataclass(frozen=True)
class PlanningTask:
    facts: tuple[tuple, ...]
    operators: tuple[GroundOperator, ...]
    init: frozenset[int]
    goal: frozenset[int]
    static_facts: frozenset[tuple] = frozenset()
    name: str = ""
    _index: dict = field(default=None, compare=False, repr=False)
    _by_name: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(self.facts)})
        object.__setattr__(self, "_by_name", {o.name: o for o in self.operators})
        n = len(self.facts)
        for s, what in ((self.init, "init"), (self.goal, "goal")):
            if any(not 0 <= f < n for f in s):
                raise ValueError(f"{what} references unknown fact ids")
        for o in self.operators:
            if any(not 0 <= f < n for f in o.pre | o.add | o.delete):
                raise ValueError(f"operator {o.name} references unknown fact ids")

    def fact_id(self, atom: tuple) -> int:
        return self._index[atom]

    def has_fact(self, atom: tuple) -> bool:
        return atom in self._index

    def ids(self, atoms: Iterable[tuple]) -> frozenset[int]:
        return frozenset(self._index[a] for a in atoms)

    def atoms(self, state: Iterable[int]) -> list[tuple]:
        return sorted(self.facts[i] for i in state)

    def fact_name(self, fact: int) -> str:
        return "(" + " ".join(self.facts[fact]) + ")"

    def operator(self, name: str) -> GroundOperator:
        return self._by_name[name]

    def with_init_goal(self, init: Iterable[int], goal: Iterable[int]) -> PlanningTask:
        return replace(self, init=frozenset(init), goal=frozenset(goal))

    def delete_violations(self) -> list[str]:
        """Operators deleting facts they do not require (allowed, reported)."""
        return [o.name for o in self.operators if not o.delete <= o.pre]

    def successors(self, state: frozenset[int]) -> list[tuple[GroundOperator, frozenset[int]]]:
        return [(o, apply(state, o)) for o in self.operators if o.pre <= state]

    def is_goal(self, state: frozenset[int]) -> bool:
        return self.goal <= state


class InapplicableOperator(ValueError):
    def __init__(self, op: GroundOperator, missing: frozenset[int], index: int | None = None):
        self.op = op
        self.missing = missing
        self.index = index
        where = f"step {index}: " if index is not None else ""
        super().__init__(f"{where}{op.name} is not applicable; missing facts {sorted(missing)}")


def applicable(state: frozenset[int], op: GroundOperator) -> bool:
    return op.pre <= state


def apply(state: frozenset[int], op: GroundOperator) -> frozenset[int]:
    """Progress ``state`` through ``op``; deleting an absent fact is a no-op."""
    if not op.pre <= state:
        raise InapplicableOperator(op, op.pre - state)
    return (state - op.delete) | op.add


def validate_plan(state: frozenset[int], plan: Sequence[GroundOperator]) -> frozenset[int]:
    """Return ``state[plan]``; raise :class:`InapplicableOperator` with the failing index."""
    for i, op in enumerate(plan):
        if not op.pre <= state:
            raise InapplicableOperator(op, op.pre - state, index=i)
        state = (state - op.delete) | op.add
    return state


def canonical(state: Iterable[int]) -> tuple[int, ...]:
    return tuple(sorted(state))


@dataclass
class TransitionGraph:
    """Labeled transition system over an enumerated state list (BFS order)."""

    states: list[Hashable]
    transitions: set[tuple[int, str, int]]
    goal_states: set[int]
    goal: frozenset[int] | None = None
    index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.index:
            self.index = {s: i for i, s in enumerate(self.states)}

    def labels(self) -> set[str]:
        return {lab for _, lab, _ in self.transitions}

    def out_edges(self) -> dict[int, list[tuple[str, int]]]:
        out: dict[int, list[tuple[str, int]]] = {i: [] for i in range(len(self.states))}
        for s, lab, t in sorted(self.transitions):
            out[s].append((lab, t))
        return out


class StateCapExceeded(RuntimeError):
    def __init__(self, reached: int):
        self.reached = reached
        super().__init__(f"state cap exceeded after {reached} states")


def build_transition_graph(task: PlanningTask, state_cap: int = 1_000_000) -> TransitionGraph:
    """Breadth-first enumeration of the states reachable from ``task.init``."""
    if state_cap <= 0:
        raise ValueError("state_cap must be positive")
    first_pre: dict[int, list[GroundOperator]] = {}
    always = []
    for o in task.operators:
        if o.pre:
            first_pre.setdefault(min(o.pre), []).append(o)
        else:
            always.append(o)

    states = [task.init]
    index = {task.init: 0}
    transitions: set[tuple[int, str, int]] = set()
    queue = deque([0])
    while queue:
        i = queue.popleft()
        s = states[i]
        cands = list(always)
        for f in s:
            cands.extend(first_pre.get(f, ()))
        for o in cands:
            if not o.pre <= s:
                continue
            t = (s - o.delete) | o.add
            j = index.get(t)
            if j is None:
                if len(states) >= state_cap:
                    raise StateCapExceeded(len(states))
                j = len(states)
                index[t] = j
                states.append(t)
                queue.append(j)
            transitions.add((i, o.name, j))
    goals = {i for i, s in enumerate(states) if task.goal <= s}
    return TransitionGraph(states, transitions, goals, goal=task.goal, index=index)


def bfs_distances(graph: TransitionGraph) -> dict[int, int]:
    """Unit-cost distance from every state to the nearest goal state."""
    back: dict[int, list[int]] = {}
    for s, _, t in graph.transitions:
        back.setdefault(t, []).append(s)
    dist = {g: 0 for g in graph.goal_states}
    queue = deque(sorted(graph.goal_states))
    while queue:
        t = queue.popleft()
        for s in back.get(t, ()):
            if s not in dist:
                dist[s] = dist[t] + 1
                queue.append(s)
    return dist


def format_trace(task: PlanningTask, start: frozenset[int], plan: Sequence[GroundOperator]) -> str:
    """Alternating ``state:i`` / ``action:i`` blocks, facts sorted, one per line."""
    if not plan:
        return "empty plan\n"
    blocks = []
    state = start
    for i, op in enumerate(plan):
        lines = [f"state:{i}"]
        lines += [task.fact_name(f) for f in _sorted_facts(task, state)]
        blocks.append("\n".join(lines))
        lines = [f"action:{i}", op.name]
        lines += [f"  PRE: {task.fact_name(f)}" for f in _sorted_facts(task, op.pre)]
        lines += [f"  ADD: {task.fact_name(f)}" for f in _sorted_facts(task, op.add)]
        lines += [f"  DEL: {task.fact_name(f)}" for f in _sorted_facts(task, op.delete)]
        blocks.append("\n".join(lines))
        state = apply(state, op)
    return "\n\n".join(blocks) + "\n"


def _sorted_facts(task: PlanningTask, facts: Iterable[int]) -> list[int]:
    return sorted(facts, key=task.fact_name)


def parse_fact_lines(task: PlanningTask, text: str) -> frozenset[int]:
    """Read a state written one parenthesized atom per line (``state:`` headers ignored)."""
    out = set()
    for raw in text.splitlines():
        line = raw.strip().lower()
        if not line or line.startswith(("state:", ";", "#")):
            continue
        if not (line.startswith("(") and line.endswith(")")):
            raise ValueError(f"not a fact: {raw!r}")
        atom = tuple(line[1:-1].split())
        if not task.has_fact(atom):
            raise ValueError(f"unknown fact {line}")
        out.add(task.fact_id(atom))
    return frozenset(out)
