"""Explicit finite MDPs over enumerated environment states."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

from planhrl import envs


@dataclass
class FiniteMDP:
    """Tabular MDP: ``transitions[s][a]`` lists ``(t, prob)`` pairs, rewards are ``r(s, a)``.

    ``labels[s]`` is the planning state L(s) as fact ids when the MDP comes from a
    PaRL task. Terminal states have no outgoing transitions that matter.
    """

    states: list[Hashable]
    actions: tuple[int, ...]
    transitions: list[list[tuple[tuple[int, float], ...]]]
    rewards: list[list[float]]
    terminal: set[int]
    labels: list[frozenset[int]] | None = None
    initial: int = 0
    goals: set[int] = field(default_factory=set)
    dead_ends: set[int] = field(default_factory=set)
    index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.index:
            self.index = {s: i for i, s in enumerate(self.states)}

    def __len__(self) -> int:
        return len(self.states)

    def successors(self, s: int) -> set[int]:
        return {t for row in self.transitions[s] for t, p in row if p > 0}

    def reachable(self, start: int | None = None) -> set[int]:
        """States reachable from ``start``; terminal states are not expanded."""
        start = self.initial if start is None else start
        seen = {start}
        queue = deque([start])
        while queue:
            s = queue.popleft()
            if s in self.terminal:
                continue
            for t in self.successors(s):
                if t not in seen:
                    seen.add(t)
                    queue.append(t)
        return seen


def from_env(
    spec: envs.EnvSpec,
    start: envs.GridState,
    labeler: Callable[[envs.GridState], frozenset[int]] | None = None,
    reward_mode: str | None = None,
    cap: int = 2_000_000,
) -> FiniteMDP:
    """Enumerate the environment from ``start`` into a :class:`FiniteMDP`.

    Rewards must be stationary: ``minigrid-sparse`` depends on the step counter,
    so it is replaced by ``goal-only`` here.
    """
    mode = reward_mode or spec.reward_mode
    if mode in ("minigrid-sparse", "minigrid-literal"):
        mode = "goal-only"
    states = envs.enumerate_states(spec, start=start, cap=cap)
    index = {s: i for i, s in enumerate(states)}
    transitions = []
    rewards = []
    terminal = set()
    goals = set()
    for i, s in enumerate(states):
        if envs.is_goal(spec, s):
            terminal.add(i)
            goals.add(i)
            transitions.append([() for _ in spec.actions])
            rewards.append([0.0 for _ in spec.actions])
            continue
        row, rrow = [], []
        for a in spec.actions:
            t = envs.transition(spec, s, a)
            j = index[t]
            row.append(((j, 1.0),))
            rrow.append(_stationary_reward(mode, envs.is_goal(spec, t)))
        transitions.append(row)
        rewards.append(rrow)
    labels = [labeler(s) for s in states] if labeler else None
    return FiniteMDP(states, spec.actions, transitions, rewards, terminal, labels, 0, goals, index=index)


def _stationary_reward(mode: str, at_goal: bool) -> float:
    if mode == "step-cost":
        return 1.0 if at_goal else envs.STEP_COST
    return 1.0 if at_goal else 0.0


def chain(n: int, goal_reward: float = 1.0, step_reward: float = 0.0) -> FiniteMDP:
    """Deterministic n-state chain; action 1 moves right, action 0 stays. Last state is the goal."""
    transitions, rewards = [], []
    for s in range(n):
        if s == n - 1:
            transitions.append([(), ()])
            rewards.append([0.0, 0.0])
            continue
        transitions.append([((s, 1.0),), ((s + 1, 1.0),)])
        r_move = goal_reward if s + 1 == n - 1 else step_reward
        rewards.append([step_reward, r_move])
    return FiniteMDP(list(range(n)), (0, 1), transitions, rewards, {n - 1}, goals={n - 1})


def restrict(
    mdp: FiniteMDP, keep: Callable[[int, int, int], bool], terminal: set[int], goals: set[int]
) -> FiniteMDP:
    """Drop transitions failing ``keep(s, a, t)`` and renormalise each (s, a) row.

    Rows left with no mass, for every action, mark the state as a dead end.
    """
    transitions = []
    dead = set()
    for s, row in enumerate(mdp.transitions):
        new_row = []
        for a, outcomes in enumerate(row):
            kept = [(t, p) for t, p in outcomes if p > 0 and keep(s, a, t)]
            mass = sum(p for _, p in kept)
            new_row.append(tuple((t, p / mass) for t, p in kept) if mass > 0 else ())
        if s not in terminal and not any(new_row):
            dead.add(s)
        transitions.append(new_row)
    return FiniteMDP(
        mdp.states, mdp.actions, transitions, mdp.rewards, set(terminal) | dead,
        mdp.labels, mdp.initial, set(goals), dead, index=mdp.index,
    )


def state_sequence(mdp: FiniteMDP, start: int, actions: Sequence[int]) -> list[int]:
    """Follow deterministic transitions; stops early at terminal or blocked states."""
    out = [start]
    s = start
    for a in actions:
        if s in mdp.terminal or not mdp.transitions[s][a]:
            break
        s = mdp.transitions[s][a][0][0]
        out.append(s)
    return out
