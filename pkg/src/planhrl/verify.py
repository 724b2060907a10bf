"""Brute-force oracles: SMDP transition graphs, bisimulation, value iteration, frame monotonicity."""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from planhrl.mdp import FiniteMDP
from planhrl.parl import CheckResult, OptionSpec, ParlTask, frame_of, is_frame_preserving, reachable_under_frame
from planhrl.planning import TransitionGraph, build_transition_graph

# A policy maps (option, entry frame, state index) to the actions it may take.
# Several actions mean the policy is explored exhaustively; none means it stalls.
Policy = Callable[[OptionSpec, frozenset, int], Iterable[int]]


# ---------------------------------------------------------------------------
# policies


def exhaustive_policy(m: FiniteMDP) -> Policy:
    actions = tuple(m.actions)
    return lambda option, frame, s: actions


def still_policy(option: OptionSpec, frame: frozenset, s: int) -> tuple[int, ...]:
    return ()


def frame_constrained_policy(m: FiniteMDP) -> Policy:
    """All actions whose every outcome keeps the entry frame true."""
    labels = m.labels

    def policy(option, frame, s):
        out = []
        for a, outcomes in enumerate(m.transitions[s]):
            if outcomes and all(frame <= labels[t] for t, _ in outcomes):
                out.append(a)
        return out

    return policy


def shortest_path_policy(m: FiniteMDP, base: Policy | None = None) -> Policy:
    """Deterministic policy taking the lowest-id action that shortens the distance to β.

    Distances are computed inside the graph allowed by ``base`` (frame-constrained by
    default), once per (option, frame).
    """
    base = base or frame_constrained_policy(m)
    cache: dict[tuple[str, frozenset], dict[int, int]] = {}

    def distances(option, frame):
        key = (option.id, frame)
        if key not in cache:
            beta = _beta(m, option)
            back: dict[int, list[int]] = {}
            for s in range(len(m)):
                if s in beta or s in m.terminal:
                    continue
                for a in base(option, frame, s):
                    for t, p in m.transitions[s][a]:
                        if p > 0:
                            back.setdefault(t, []).append(s)
            dist = {b: 0 for b in beta}
            queue = deque(sorted(beta))
            while queue:
                t = queue.popleft()
                for s in back.get(t, ()):
                    if s not in dist:
                        dist[s] = dist[t] + 1
                        queue.append(s)
            cache[key] = dist
        return cache[key]

    def policy(option, frame, s):
        dist = distances(option, frame)
        here = dist.get(s)
        if here is None:
            return ()
        for a in sorted(base(option, frame, s)):
            outcomes = m.transitions[s][a]
            if outcomes and all(dist.get(t, math.inf) < here for t, _ in outcomes):
                return (a,)
        return ()

    return policy


def table_policy(m: FiniteMDP, choose: Callable[[OptionSpec, int], int | None]) -> Policy:
    """Wrap a greedy chooser ``choose(option, state_index) -> action``."""

    def policy(option, frame, s):
        a = choose(option, s)
        return () if a is None else (a,)

    return policy


def mutated_policy(m: FiniteMDP, options: list[OptionSpec], rng: random.Random, rate: float) -> Policy:
    """A randomly loosened frame-constrained policy.

    Each option ignores a random subset of facts when checking its frame (each fact
    with probability ``rate``), and a ``rate`` fraction of (option, state) pairs gains
    one extra random action. Both mutations can break frame preservation while the
    options still reach their termination sets.
    """
    labels = m.labels
    n_facts = 1 + max((max(lab) for lab in labels if lab), default=0)
    ignored = {o.id: frozenset(f for f in range(n_facts) if rng.random() < rate) for o in options}
    extra: dict[tuple[str, int], int] = {}
    for o in options:
        for s in range(len(m)):
            if rng.random() < rate:
                extra[(o.id, s)] = rng.choice(m.actions)

    def policy(option, frame, s):
        kept = frame - ignored[option.id]
        acts = [
            a for a, outcomes in enumerate(m.transitions[s])
            if outcomes and all(kept <= labels[t] for t, _ in outcomes)
        ]
        a = extra.get((option.id, s))
        if a is not None and a not in acts:
            acts.append(a)
        return acts

    return policy


# ---------------------------------------------------------------------------
# SMDP transition graph


def _beta(m: FiniteMDP, option: OptionSpec) -> set[int]:
    if option.is_goal:
        return set(m.goals)
    term = option.term_facts
    return {i for i, lab in enumerate(m.labels) if term <= lab}


def _init_states(m: FiniteMDP, option: OptionSpec, task) -> list[int]:
    need = task.goal if option.is_goal else option.operator.pre
    return [i for i, lab in enumerate(m.labels) if need <= lab]


def smdp_transition_graph(parl: ParlTask, policy: Policy, options: list[OptionSpec] | None = None) -> TransitionGraph:
    """Edges (s, o, t): t ∈ β reachable from s ∈ I under the option's policy.

    ``options`` defaults to the operator options, whose labels match the planning
    graph; pass the goal option explicitly to include its edges. Option executions that start inside β, in an environment terminal state, or never
    reach β contribute no edge. States are the enumerated MDP states.
    """
    m = parl.mdp
    transitions: set[tuple[int, str, int]] = set()
    if options is None:
        options = [o for o in parl.options if not o.is_goal]
    for option in options:
        beta = _beta(m, option)
        groups: dict[frozenset, list[int]] = {}
        for s in _init_states(m, option, parl.task):
            if s in beta or s in m.terminal:
                continue
            frame = frozenset() if option.is_goal else frame_of(option.operator, m.labels[s])[1]
            groups.setdefault(frame, []).append(s)
        for frame, entries in groups.items():
            reach = _reachable_beta(m, option, frame, entries, beta, policy)
            for s in entries:
                for t in reach[s]:
                    transitions.add((s, option.id, t))
    goal_states = set(m.goals)
    return TransitionGraph(list(m.states), transitions, goal_states, parl.task.goal, index=m.index)


def _reachable_beta(m, option, frame, entries, beta, policy) -> dict[int, set[int]]:
    """For each entry, the β states reachable through policy-allowed transitions."""
    succ: dict[int, list[int]] = {}
    stack = list(entries)
    seen = set(entries)
    while stack:
        u = stack.pop()
        if u in beta or u in m.terminal:
            succ[u] = []
            continue
        out = []
        for a in policy(option, frame, u):
            for t, p in m.transitions[u][a]:
                if p > 0:
                    out.append(t)
                    if t not in seen:
                        seen.add(t)
                        stack.append(t)
        succ[u] = out

    beta_bit = {b: 1 << i for i, b in enumerate(sorted(b for b in seen if b in beta))}
    bits = _scc_reach(succ, beta_bit)
    order = sorted(beta_bit, key=beta_bit.get)
    result = {}
    for s in entries:
        mask = bits[s]
        result[s] = {b for b in order if mask & beta_bit[b]}
    return result


def _scc_reach(succ: dict[int, list[int]], own: dict[int, int]) -> dict[int, int]:
    """Bitmask of marked nodes reachable from every node (Tarjan, iterative)."""
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    reach: dict[int, int] = {}
    counter = 0
    for root in succ:
        if root in index:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, i = work[-1]
            children = succ[v]
            if i < len(children):
                work[-1] = (v, i + 1)
                w = children[i]
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, 0))
                elif w in on_stack:
                    low[v] = min(low[v], index[w])
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                members = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    members.append(w)
                    if w == v:
                        break
                mask = 0
                for w in members:
                    mask |= own.get(w, 0)
                    for x in succ[w]:
                        mask |= reach.get(x, 0)
                for w in members:
                    reach[w] = mask
    return reach


# ---------------------------------------------------------------------------
# bisimulation


@dataclass
class BisimReport:
    """Outcome of the bisimulation game on the relation {(s, p) : L(s) = p}.

    ``relation`` maps each SMDP state index to its related planning-state index.
    """

    relation: dict[int, int]
    holds: bool
    forth: bool = True
    back: bool = True
    goal: bool = True
    witness: tuple | None = None
    detail: str = ""

    def related(self, s: int, t: int) -> bool:
        """Two MDP states are related when they share an L image."""
        return self.relation.get(s) is not None and self.relation.get(s) == self.relation.get(t)


def check_bisimulation(t_pi: TransitionGraph, smdp: TransitionGraph, mapper) -> BisimReport:
    """Check that L relates ``smdp`` and ``t_pi`` as a labelled bisimulation.

    Forth: each SMDP edge (s, o, t) has a planning edge (L(s), o, L(t)).
    Back: each planning edge out of L(s) is matched from s, except at environment
    goal states, which absorb. Goal: environment goal states map to planning goals.
    """
    relation: dict[int, int] = {}
    for i, s in enumerate(smdp.states):
        p = t_pi.index.get(mapper(s))
        if p is None:
            return BisimReport(relation, False, witness=(s,), detail="L(s) is not a reachable planning state")
        relation[i] = p

    pi_edges = t_pi.transitions
    for s, label, t in sorted(smdp.transitions):
        if (relation[s], label, relation[t]) not in pi_edges:
            return BisimReport(
                relation, False, forth=False, witness=(smdp.states[s], label, smdp.states[t]),
                detail=f"{label} edge has no planning counterpart",
            )

    pi_out = t_pi.out_edges()
    smdp_out: dict[int, set[tuple[str, int]]] = {}
    for s, label, t in smdp.transitions:
        smdp_out.setdefault(s, set()).add((label, relation[t]))
    for s in range(len(smdp.states)):
        if s in smdp.goal_states:
            continue
        have = smdp_out.get(s, set())
        for label, q in pi_out[relation[s]]:
            if (label, q) not in have:
                return BisimReport(
                    relation, False, back=False, witness=(smdp.states[s], label, t_pi.states[q]),
                    detail=f"planning edge {label} is not realised from this state",
                )

    for g in smdp.goal_states:
        if relation[g] not in t_pi.goal_states:
            return BisimReport(relation, False, goal=False, witness=(smdp.states[g],), detail="goal state maps outside s*")
    return BisimReport(relation, True)


def planning_graph(parl: ParlTask, state_cap: int = 1_000_000) -> TransitionGraph:
    return build_transition_graph(parl.task, state_cap)


@dataclass
class Theorem1Result:
    frame_preserving: CheckResult
    bisim: BisimReport

    @property
    def implication_holds(self) -> bool:
        return (not self.frame_preserving.holds) or self.bisim.holds


def check_theorem1(parl: ParlTask, policy: Policy, t_pi: TransitionGraph | None = None) -> Theorem1Result:
    t_pi = t_pi or planning_graph(parl)
    smdp = smdp_transition_graph(parl, policy)
    return Theorem1Result(is_frame_preserving(parl, smdp), check_bisimulation(t_pi, smdp, parl.mapper))


@dataclass
class MutationSummary:
    trials: int = 0
    frame_preserving: int = 0
    bisimilar: int = 0
    falsified: list[int] = field(default_factory=list)


def mutation_harness(parl: ParlTask, trials: int, seed: int = 0, max_rate: float = 0.5) -> MutationSummary:
    """Check the frame-preservation-implies-bisimulation implication on ``trials`` randomly mutated policies.

    Records how often frame preservation and bisimilarity hold, and the trials where
    the first holds without the second.
    """
    rng = random.Random(seed)
    t_pi = planning_graph(parl)
    out = MutationSummary()
    for i in range(trials):
        policy = mutated_policy(parl.mdp, parl.options, rng, max_rate * rng.random())
        res = check_theorem1(parl, policy, t_pi)
        out.trials += 1
        out.frame_preserving += res.frame_preserving.holds
        out.bisimilar += res.bisim.holds
        if not res.implication_holds:
            out.falsified.append(i)
    return out


# ---------------------------------------------------------------------------
# value iteration


class NonConvergence(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"no convergence after {iterations} sweeps (residual {residual:.3g})")


def value_iteration(m: FiniteMDP, gamma: float, tol: float = 1e-10, max_iter: int = 100_000) -> list[float]:
    """Optimal state values; terminal and dead-end states are worth 0."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must be in [0, 1)")
    n = len(m)
    v = [0.0] * n
    for it in range(1, max_iter + 1):
        delta = 0.0
        new = [0.0] * n
        for s in range(n):
            if s in m.terminal:
                continue
            best = -math.inf
            for a, outcomes in enumerate(m.transitions[s]):
                if not outcomes:
                    continue
                q = m.rewards[s][a] + gamma * sum(p * v[t] for t, p in outcomes)
                best = max(best, q)
            new[s] = 0.0 if best == -math.inf else best
            delta = max(delta, abs(new[s] - v[s]))
        v = new
        if delta < tol:
            return v
    raise NonConvergence(delta, max_iter)


@dataclass
class SmdpOutcome:
    target: int
    steps: int
    reward: float  # discounted sum of primitive rewards along the execution
    p_discounted: float  # probability weighted by gamma ** steps
    p_plain: float


@dataclass
class SmdpModel:
    """Option-level rewards R(s, O) and transitions P(t | s, O) from exact rollouts."""

    gamma: float
    outcomes: dict[int, dict[str, SmdpOutcome]]
    terminal: set[int]
    n_states: int


def smdp_model(parl: ParlTask, policy: Policy, gamma: float, step_cap: int = 10_000) -> SmdpModel:
    """Roll each option's deterministic policy from every initiation state.

    Only single-action (deterministic) policies are supported; executions that loop,
    stall or hit the cap are left out.
    """
    m = parl.mdp
    outcomes: dict[int, dict[str, SmdpOutcome]] = {}
    for option in parl.options:
        beta = _beta(m, option)
        for s in _init_states(m, option, parl.task):
            if s in beta or s in m.terminal:
                continue
            frame = frozenset() if option.is_goal else frame_of(option.operator, m.labels[s])[1]
            u, ret, k, visited = s, 0.0, 0, {s}
            while u not in beta and u not in m.terminal and k < step_cap:
                acts = list(policy(option, frame, u))
                if len(acts) != 1:
                    if len(acts) > 1:
                        raise ValueError("smdp_model needs a deterministic policy")
                    break
                (a,) = acts
                (t, _), = m.transitions[u][a]
                ret += gamma ** k * m.rewards[u][a]
                k += 1
                u = t
                if u in visited:
                    break
                visited.add(u)
            if u in beta:
                outcomes.setdefault(s, {})[option.id] = SmdpOutcome(u, k, ret, gamma ** k, 1.0)
    return SmdpModel(gamma, outcomes, set(m.terminal), len(m))


def smdp_value_iteration(model: SmdpModel, tol: float = 1e-10, max_iter: int = 100_000) -> list[float]:
    """V(s) = max_O R(s, O) + P_γ(t | s, O) V(t) over the options available at s."""
    v = [0.0] * model.n_states
    for it in range(1, max_iter + 1):
        delta = 0.0
        for s, opts in model.outcomes.items():
            best = max(o.reward + o.p_discounted * v[o.target] for o in opts.values())
            delta = max(delta, abs(best - v[s]))
            v[s] = best
        if delta < tol:
            return v
    raise NonConvergence(delta, max_iter)


# ---------------------------------------------------------------------------
# reachability under nested frames


def check_theorem2(parl: ParlTask, option: OptionSpec, entry: int, frame_p: frozenset, frame_q: frozenset) -> bool:
    """Reachable states under the larger frame are reachable under the smaller one."""
    m = parl.mdp
    if option.is_goal:
        raise ValueError("the goal option has no frame")
    full = frame_of(option.operator, m.labels[entry])[1]
    if not (frame_p <= frame_q <= full):
        raise ValueError("need frame_p ⊆ frame_q ⊆ frame(option, entry)")
    if not option.operator.pre <= m.labels[entry]:
        raise ValueError("option does not initiate at the entry state")
    rq = reachable_under_frame(m, option, entry, frame_q)
    rp = reachable_under_frame(m, option, entry, frame_p)
    return rq <= rp


def bfs_distances_to_goal(m: FiniteMDP) -> dict[int, int]:
    """Primitive-step distance from each state to the nearest environment goal."""
    back: dict[int, list[int]] = {}
    for s, row in enumerate(m.transitions):
        for outcomes in row:
            for t, p in outcomes:
                if p > 0 and t != s:
                    back.setdefault(t, []).append(s)
    dist = {g: 0 for g in m.goals}
    queue = deque(sorted(m.goals))
    while queue:
        t = queue.popleft()
        for s in back.get(t, ()):
            if s not in dist:
                dist[s] = dist[t] + 1
                queue.append(s)
    return dist



@dataclass
class Theorem2Summary:
    trials: int = 0
    failures: list[tuple] = field(default_factory=list)
    strict: int = 0  # trials where the larger frame reached strictly fewer states

    @property
    def holds(self) -> bool:
        return not self.failures


def theorem2_suite(parl: ParlTask, trials: int, seed: int = 0) -> Theorem2Summary:
    """Random (option, entry, F^p ⊆ F^q ⊆ F) triples checked for reachable-set inclusion."""
    rng = random.Random(seed)
    m = parl.mdp
    candidates = []
    for option in parl.options:
        if option.is_goal:
            continue
        beta = _beta(m, option)
        entries = [s for s in _init_states(m, option, parl.task) if s not in beta and s not in m.terminal]
        if entries:
            candidates.append((option, entries))
    out = Theorem2Summary()
    if not candidates:
        return out
    for _ in range(trials):
        option, entries = rng.choice(candidates)
        entry = rng.choice(entries)
        full = sorted(frame_of(option.operator, m.labels[entry])[1])
        q = frozenset(f for f in full if rng.random() < 0.7)
        p = frozenset(f for f in q if rng.random() < 0.5)
        rq = reachable_under_frame(m, option, entry, q)
        rp = reachable_under_frame(m, option, entry, p)
        out.trials += 1
        out.strict += len(rq) < len(rp)
        if not rq <= rp:
            out.failures.append((option.id, m.states[entry], p, q))
    return out
