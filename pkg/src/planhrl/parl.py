"""Planning-annotated RL tasks: state mapping, plan options, frames and their checks."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Hashable, Iterable

from planhrl import envs, mdp as mdplib
from planhrl.planning import GroundOperator, PlanningTask, apply

GOAL_ID = "GOAL"

# Defaults for the intrinsic reward. c1 is our choice; c2 and the bonus follow the
# MiniGrid hyperparameters, with the N-rooms step cost as an alternative c2.
DEFAULT_C1 = -1.0
MINIGRID_C2 = -0.9 / 1024
NROOMS_C2 = -0.05
DEFAULT_BONUS = 1.0


class MappingError(ValueError):
    """L disagrees with the planning task's init or goal."""


class FrameError(ValueError):
    pass


@dataclass
class StateMapper:
    """L: MDP state -> planning state (fact ids of ``codomain_task``)."""

    map: Callable[[Hashable], Iterable[tuple]]
    codomain_task: PlanningTask
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, s: Hashable) -> frozenset[int]:
        hit = self._cache.get(s)
        if hit is not None:
            return hit
        task = self.codomain_task
        out = set()
        for atom in self.map(s):
            if not task.has_fact(atom):
                if atom in task.static_facts:
                    continue
                raise MappingError(f"L produced an atom unknown to the task: {atom}")
            out.add(task.fact_id(atom))
        facts = frozenset(out)
        self._cache[s] = facts
        return facts

    def check(self, s0: Hashable, goal_states: Iterable[Hashable] = ()) -> None:
        """L(s0) must equal the task's init and every goal state must satisfy s*."""
        task = self.codomain_task
        got = self(s0)
        if got != task.init:
            extra = task.atoms(got - task.init)
            missing = task.atoms(task.init - got)
            raise MappingError(f"L(s0) differs from init: extra {extra}, missing {missing}")
        for g in goal_states:
            if not task.goal <= self(g):
                raise MappingError(f"goal state {g} maps outside the planning goal")


@dataclass(frozen=True)
class OptionSpec:
    id: str
    operator: GroundOperator | None = None

    @property
    def is_goal(self) -> bool:
        return self.operator is None

    @property
    def term_facts(self) -> frozenset[int]:
        """prv(o) ∪ add(o): what must hold when the option terminates."""
        op = self.operator
        return op.prevail | op.add


def derive_options(task: PlanningTask) -> list[OptionSpec]:
    """One option per grounded operator, then the goal option."""
    out = [OptionSpec(op.name, op) for op in task.operators]
    if len({o.id for o in out}) != len(out):
        raise ValueError("grounded operator names are not unique")
    out.append(OptionSpec(GOAL_ID))
    return out


def initiation_facts(option: OptionSpec, task: PlanningTask) -> frozenset[int]:
    return task.goal if option.is_goal else option.operator.pre


def initiation(option: OptionSpec, s: Hashable, mapper: StateMapper) -> bool:
    return initiation_facts(option, mapper.codomain_task) <= mapper(s)


def termination(
    option: OptionSpec, s: Hashable, mapper: StateMapper, is_env_goal: Callable[[Hashable], bool] | None = None
) -> bool:
    """β membership; the goal option needs the environment goal test."""
    if option.is_goal:
        if is_env_goal is None:
            raise ValueError("goal option termination needs the environment goal test")
        return is_env_goal(s)
    return option.term_facts <= mapper(s)


@dataclass(frozen=True)
class RewardConstants:
    c1: float = DEFAULT_C1
    c2: float = MINIGRID_C2
    termination_bonus: float = DEFAULT_BONUS

    def __post_init__(self):
        if self.c1 > 0 or self.c2 > 0:
            raise ValueError("c1 and c2 must be non-positive")
        if self.termination_bonus < 0:
            raise ValueError("termination bonus must be non-negative")


@dataclass(frozen=True)
class FrameSnapshot:
    entry_state: Hashable
    context: frozenset[int]
    frame: frozenset[int]
    c1: float = DEFAULT_C1
    c2: float = MINIGRID_C2
    termination_bonus: float = DEFAULT_BONUS


def frame_of(op: GroundOperator, facts: frozenset[int]) -> tuple[frozenset[int], frozenset[int]]:
    """(context, frame) of ``op`` at planning state ``facts``."""
    context = facts - (op.pre | op.add | op.delete)
    return context, op.prevail | context


def context_and_frame(
    option: OptionSpec, s: Hashable, mapper: StateMapper, constants: RewardConstants = RewardConstants()
) -> FrameSnapshot:
    if option.is_goal:
        raise FrameError("the goal option has no frame")
    facts = mapper(s)
    if not option.operator.pre <= facts:
        raise FrameError(f"{option.id} does not initiate in the given state")
    context, frame = frame_of(option.operator, facts)
    return FrameSnapshot(s, context, frame, constants.c1, constants.c2, constants.termination_bonus)


def goal_snapshot(s: Hashable, constants: RewardConstants = RewardConstants()) -> FrameSnapshot:
    """Snapshot with an empty frame, used for the goal option's reward."""
    return FrameSnapshot(s, frozenset(), frozenset(), constants.c1, constants.c2, constants.termination_bonus)


def intrinsic_reward(
    snapshot: FrameSnapshot,
    option: OptionSpec,
    s: Hashable,
    mapper: StateMapper,
    is_env_goal: Callable[[Hashable], bool] | None = None,
) -> float:
    """c1 per frame fact missing from L(s), c2 while outside β, the bonus inside β."""
    violated = len(snapshot.frame - mapper(s)) if snapshot.frame else 0
    done = termination(option, s, mapper, is_env_goal)
    return snapshot.c1 * violated + (snapshot.termination_bonus if done else snapshot.c2)


# ---------------------------------------------------------------------------
# PaRL tasks over the grid environments


@dataclass
class ParlTask:
    """Environment, planning task, L and the derived options for one episode start."""

    spec: envs.EnvSpec
    task: PlanningTask
    mapper: StateMapper
    options: list[OptionSpec]
    s0: envs.GridState
    enum_cap: int = 2_000_000

    def option(self, option_id: str) -> OptionSpec:
        for o in self.options:
            if o.id == option_id:
                return o
        raise KeyError(option_id)

    @property
    def goal_option(self) -> OptionSpec:
        return self.options[-1]

    def is_env_goal(self, s: envs.GridState) -> bool:
        return envs.is_goal(self.spec, s)

    def initiation(self, option: OptionSpec, s) -> bool:
        return initiation(option, s, self.mapper)

    def termination(self, option: OptionSpec, s) -> bool:
        return termination(option, s, self.mapper, self.is_env_goal)

    @cached_property
    def mdp(self) -> mdplib.FiniteMDP:
        """The environment enumerated from ``s0`` with L labels attached."""
        return mdplib.from_env(self.spec, self.s0, labeler=self.mapper, cap=self.enum_cap)


def make_parl(
    spec: envs.EnvSpec, task: PlanningTask, s0: envs.GridState | int = 0, enum_cap: int = 2_000_000
) -> ParlTask:
    """Annotate ``spec`` with ``task``; ``s0`` is a start state or a reset seed.

    N-rooms episodes draw start and goal anywhere, so the task's init and goal are
    rebound to L(s0) and the goal cell's room. MiniGrid layouts keep the PDDL problem
    as written and L(s0) must match it.
    """
    if isinstance(s0, int):
        s0 = envs.reset(spec, s0)
    if not spec.minigrid:
        atoms = envs.map_state(spec, s0)
        goal = envs.goal_atoms(spec, s0) if s0.goal is not None else frozenset()
        task = task.with_init_goal(task.ids(atoms), task.ids(goal))
    mapper = StateMapper(lambda s: envs.map_state(spec, s), task)
    goal_states = []
    if s0.goal is not None:
        goal_states.append(envs.GridState(s0.goal, s0.agent_dir, s0.carried, s0.doors, s0.keys, s0.balls, s0.goal))
    mapper.check(s0, goal_states)
    return ParlTask(spec, task, mapper, derive_options(task), s0, enum_cap)


# ---------------------------------------------------------------------------
# checks over the enumerated MDP


@dataclass(frozen=True)
class CheckResult:
    holds: bool
    witness: tuple | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.holds


def is_proper(parl: ParlTask) -> CheckResult:
    """Every MDP transition must be an L-self-loop or a planning transition.

    The witness is ``(s, action, t)`` over environment states. The converse direction
    (every planning edge realised by some MDP transition between every pair of
    preimages) cannot hold for grid cells and is not checked.
    """
    m = parl.mdp
    labels = m.labels
    succ_cache: dict[frozenset[int], set[frozenset[int]]] = {}
    for s, row in enumerate(m.transitions):
        ls = labels[s]
        for a, outcomes in enumerate(row):
            for t, p in outcomes:
                lt = labels[t]
                if p <= 0 or lt == ls:
                    continue
                nexts = succ_cache.get(ls)
                if nexts is None:
                    nexts = {t2 for _, t2 in parl.task.successors(ls)}
                    succ_cache[ls] = nexts
                if lt not in nexts:
                    task = parl.task
                    detail = f"{task.atoms(ls)} -> {task.atoms(lt)} is not a planning transition"
                    return CheckResult(False, (m.states[s], a, m.states[t]), detail)
    return CheckResult(True)


def is_frame_preserving(parl: ParlTask, smdp_graph) -> CheckResult:
    """Frames at source and target agree on every operator-labelled SMDP edge."""
    by_id = {o.id: o for o in parl.options}
    for s, label, t in sorted(smdp_graph.transitions):
        option = by_id[label]
        if option.is_goal:
            continue
        ls = parl.mapper(smdp_graph.states[s])
        lt = parl.mapper(smdp_graph.states[t])
        fs = frame_of(option.operator, ls)[1]
        ft = frame_of(option.operator, lt)[1]
        if fs != ft:
            task = parl.task
            detail = f"{label}: frame {task.atoms(fs)} became {task.atoms(ft)}"
            return CheckResult(False, (smdp_graph.states[s], label, smdp_graph.states[t]), detail)
    return CheckResult(True)


def restrict_to_frame(m: mdplib.FiniteMDP, option: OptionSpec, snapshot: FrameSnapshot) -> mdplib.FiniteMDP:
    """Frame-constrained option MDP: drop transitions into frame-violating states.

    Goals are the option's termination states; they and the environment's own
    terminal states absorb. States left without any transition are flagged as dead ends.
    """
    if option.is_goal:
        raise FrameError("the goal option has no frame")
    labels = m.labels
    entry = m.index[snapshot.entry_state] if snapshot.entry_state in m.index else snapshot.entry_state
    frame = snapshot.frame
    if not frame <= labels[entry]:
        raise FrameError("entry state violates the frame")
    term = option.term_facts
    goals = {i for i, lab in enumerate(labels) if term <= lab}
    restricted = mdplib.restrict(m, lambda s, a, t: frame <= labels[t], set(m.terminal) | goals, goals)
    restricted.initial = entry
    return restricted


def reachable_under_frame(m: mdplib.FiniteMDP, option: OptionSpec, entry: int, frame: frozenset[int]) -> set[int]:
    """States reachable from ``entry`` in the option MDP restricted to ``frame``.

    Same set as ``restrict_to_frame(...).reachable(entry)``, found by a direct search.
    """
    if option.is_goal:
        raise FrameError("the goal option has no frame")
    labels = m.labels
    if not frame <= labels[entry]:
        raise FrameError("entry state violates the frame")
    term = option.term_facts
    seen = {entry}
    queue = deque([entry])
    while queue:
        u = queue.popleft()
        if u in m.terminal or term <= labels[u]:
            continue
        for outcomes in m.transitions[u]:
            for t, p in outcomes:
                if p > 0 and t not in seen and frame <= labels[t]:
                    seen.add(t)
                    queue.append(t)
    return seen


# ---------------------------------------------------------------------------
# text dump


def format_options(task: PlanningTask, options: list[OptionSpec]) -> str:
    """One block per option: id, initiation facts, termination facts."""
    lines = []
    for o in options:
        if o.is_goal:
            lines.append(f"option {o.id}")
            lines.append("  init: " + " ".join(task.fact_name(f) for f in _sorted(task, task.goal)))
            lines.append("  term: <environment goal>")
            continue
        op = o.operator
        lines.append(f"option {o.id}")
        lines.append("  init: " + " ".join(task.fact_name(f) for f in _sorted(task, op.pre)))
        lines.append("  term: " + " ".join(task.fact_name(f) for f in _sorted(task, o.term_facts)))
        lines.append("  prevail: " + " ".join(task.fact_name(f) for f in _sorted(task, op.prevail)))
    return "\n".join(lines) + "\n"


def _sorted(task: PlanningTask, facts) -> list[int]:
    return sorted(facts, key=task.fact_name)


def progression_agrees(option: OptionSpec, ls: frozenset[int], lt: frozenset[int]) -> bool:
    """True when ``lt`` is exactly ``ls`` progressed through the option's operator."""
    return option.operator.pre <= ls and apply(ls, option.operator) == lt
