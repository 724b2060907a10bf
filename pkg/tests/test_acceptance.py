"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line.

Run with pytest (lines appear in the terminal summary) or directly as a script.
"""

import random
import statistics
import time
from pathlib import Path

import pytest

import oracles
import traces
from conftest import parl_for
from planhrl import cli, envs, hrl, mdp, pddl, verify
from planhrl.agents import LearnerConfig, QTable, q_update, select_action
from planhrl.parl import (
    MINIGRID_C2,
    NROOMS_C2,
    RewardConstants,
    context_and_frame,
    derive_options,
    intrinsic_reward,
    is_proper,
)
from planhrl.planner import astar

RESULTS: list[str] = []

PROPER_LAYOUTS = ["doorkey8", "nine-rooms", "one-cell", "rooms-balls", "rooms-locked", "rooms12-16", "rooms4-20"]
MUTATED_LAYOUT = "doorkey8-teleport"
THEOREM_FIXTURES = ["doorkey8", "rooms4-20"]
NESTED_FIXTURES = ["doorkey8", "nine-rooms", "rooms-balls", "rooms-locked", "rooms12-16", "rooms4-20"]


def report(number: int, ok: bool, detail: str) -> None:
    RESULTS.append(f"acceptance {number}: {'PASS' if ok else 'FAIL'} {detail}")
    print(RESULTS[-1])


# 1 ------------------------------------------------------------------------


def test_criterion_1_pddl_fidelity():
    start = time.perf_counter()
    tasks = {name: pddl.load_task(*paths) for name, paths in oracles.SHIPPED_PROBLEMS.items()}
    elapsed = time.perf_counter() - start
    d, p = oracles.asts("doorkey")
    doorkey_oracle = len(oracles.brute_ground(d, p))
    _, rooms = oracles.asts("rooms-16-12")
    directed_pairs = sum(a[0] == "connected-rooms" for a in rooms.init)
    ok = (
        len(tasks["doorkey"].operators) == doorkey_oracle == 10
        and len(tasks["rooms-16-12"].operators) == directed_pairs
        and all(t.operators for t in tasks.values())
        and elapsed < 1.0
    )
    report(1, ok, f"{len(tasks)} problems grounded in {elapsed:.3f}s; doorkey {len(tasks['doorkey'].operators)} ops"
           f" (oracle {doorkey_oracle}); rooms {len(tasks['rooms-16-12'].operators)} ops ({directed_pairs} pairs)")
    assert ok


# 2 ------------------------------------------------------------------------


def _timed_plan(capsys, problem):
    start = time.perf_counter()
    code = cli.main(["plan", str(oracles.MAZE_DOMAIN), str(problem)])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    return code, out, elapsed


def test_criterion_2_plan_reproduction(capsys):
    code1, out1, t1 = _timed_plan(capsys, oracles.SHIPPED_PROBLEMS["doorkey"][1])
    code2, out2, t2 = _timed_plan(capsys, oracles.SHIPPED_PROBLEMS["nine-rooms"][1])
    lines = out2.splitlines()
    names = [lines[i + 1] for i, ln in enumerate(lines) if ln.startswith("action:")]
    ok = (
        code1 == 0 and traces.blocks(out1) == traces.blocks(traces.DOORKEY_TRACE) and t1 < 1.0
        and code2 == 0 and names == traces.NINE_ROOMS_PLAN and t2 < 1.0
    )
    with capsys.disabled():
        report(2, ok, f"doorkey trace matched in {t1:.3f}s; nine-rooms {len(names)} actions in {t2:.3f}s")
    assert ok


# 3 ------------------------------------------------------------------------


def test_criterion_3_definitions():
    failures = []
    for layout in PROPER_LAYOUTS:
        parl = parl_for(layout)
        if not is_proper(parl):
            failures.append(f"{layout} not proper")
        if len(parl.options) != len(parl.task.operators) + 1:
            failures.append(f"{layout} option count")
    mutated = parl_for(MUTATED_LAYOUT)
    res = is_proper(mutated)
    if res.holds or res.witness is None:
        failures.append("mutated fixture passed properness")
    for name, paths in oracles.SHIPPED_PROBLEMS.items():
        task = pddl.load_task(*paths)
        if len(derive_options(task)) != len(task.operators) + 1:
            failures.append(f"{name} option count")
    ok = not failures
    report(3, ok, f"{len(PROPER_LAYOUTS)} proper pairs, mutated witness {res.witness[0].agent_pos}->"
           f"{res.witness[2].agent_pos}" if ok else "; ".join(failures))
    assert ok


# 4 ------------------------------------------------------------------------


def test_criterion_4_theorem1():
    start = time.perf_counter()
    details, ok = [], True
    total = 0
    for layout in THEOREM_FIXTURES:
        parl = parl_for(layout)
        base = verify.check_theorem1(parl, verify.frame_constrained_policy(parl.mdp))
        mut = verify.mutation_harness(parl, 100, seed=0)
        total += mut.trials
        ok &= base.frame_preserving.holds and base.implication_holds and not mut.falsified
        details.append(f"{layout}: {mut.trials} mutations, {mut.frame_preserving} frame-preserving, "
                       f"{len(mut.falsified)} falsified")
    elapsed = time.perf_counter() - start
    ok &= total >= 100 and elapsed < 60
    report(4, ok, "; ".join(details) + f" ({elapsed:.1f}s)")
    assert ok


# 5 ------------------------------------------------------------------------


def test_criterion_5_theorem2():
    details, ok = [], True
    for layout in NESTED_FIXTURES:
        parl = parl_for(layout)
        parl.mdp  # enumeration is not part of the property check
        start = time.perf_counter()
        summary = verify.theorem2_suite(parl, 100, seed=0)
        elapsed = time.perf_counter() - start
        ok &= summary.trials == 100 and summary.holds and elapsed < 60
        details.append(f"{layout} {summary.trials - len(summary.failures)}/100 ({elapsed:.1f}s)")
    report(5, ok, ", ".join(details))
    assert ok


# 6 ------------------------------------------------------------------------


def q_learning_on_chain(n: int, gamma: float, seed: int = 0) -> tuple[QTable, list[float]]:
    m = mdp.chain(n, goal_reward=1.0, step_reward=0.0)
    v = verify.value_iteration(m, gamma, tol=1e-13)
    cfg = LearnerConfig(alpha=0.5, gamma=gamma)
    q = QTable(len(m.actions))
    rng = random.Random(seed)
    for _ in range(20_000):
        s = rng.randrange(n - 1)
        for _ in range(4 * n):
            a = select_action(q, s, 1.0, rng)  # uniform behaviour; Q-learning is off-policy
            ((t, _),) = m.transitions[s][a]
            q_update(q, s, a, m.rewards[s][a], t, t in m.terminal, cfg)
            s = t
            if s in m.terminal:
                break
        err = max(abs(q.max_value(s) - v[s]) for s in range(n - 1))
        if err < 1e-7:
            break
    return q, v


def test_criterion_6_oracle_equivalence():
    q, v = q_learning_on_chain(10, 0.9)
    sup = max(abs(q.max_value(s) - v[s]) for s in range(9))
    mismatches, checked = [], 0
    rng = random.Random(0)
    for name in oracles.SHIPPED_PROBLEMS:
        d, p = oracles.asts(name)
        task = pddl.ground(d, p)
        ops = oracles.brute_ground(d, p)
        goal = frozenset(p.goal)
        starts = [frozenset(task.atoms(task.init))]
        for _ in range(10):  # random walks give further start states
            s = starts[0]
            for _ in range(rng.randrange(1, 8)):
                nxt = [(s - dl) | ad for _, pre, ad, dl in ops if pre <= s]
                s = rng.choice(nxt) if nxt else s
            starts.append(s)
        for s in starts:
            want = oracles.brute_distance(s, goal, ops)
            plan = astar(task, start=task.ids(s), heuristic="blind")
            got = None if plan is None else plan.cost
            checked += 1
            if got != want:
                mismatches.append((name, got, want))
    ok = sup <= 1e-6 and not mismatches
    report(6, ok, f"chain(10) sup-norm error {sup:.2e}; {checked} A* costs vs BFS, {len(mismatches)} mismatches")
    assert ok


# 7 ------------------------------------------------------------------------

EPISODE_BUDGET = 10_000
EVAL_EVERY = 1000
SEEDS = range(5)


def first_median_crossing(curves: dict[int, list[float]], threshold: float) -> int | None:
    rounds = min(len(c) for c in curves.values())
    for i in range(rounds):
        if statistics.median(c[i] for c in curves.values()) >= threshold:
            return (i + 1) * EVAL_EVERY
    return None


def test_criterion_7_desk_scale_learning():
    start = time.perf_counter()
    parl = parl_for("rooms4-20")
    arms = {}
    for name in ("rooms4-20", "rooms4-20-flat"):
        cfgs = [cli.load_config(name, seed=s).train for s in SEEDS]
        assert all(c.max_episodes == EPISODE_BUDGET and c.eval_every == EVAL_EVERY for c in cfgs)
        arms[cfgs[0].algorithm] = [hrl.Trainer(parl, c) for c in cfgs]
    curves = {algo: {s: [] for s in SEEDS} for algo in arms}
    hier_at = flat_at = None
    done = 0
    while done < EPISODE_BUDGET and hier_at is None and flat_at is None:
        done += EVAL_EVERY
        for algo, trainers in arms.items():
            for s, tr in zip(SEEDS, trainers):
                tr.run(until_episodes=done)
                curves[algo][s] = [r.success_rate for r in tr.log.rows]
        hier_at = first_median_crossing(curves["hplanq-per-option"], 0.9)
        flat_at = first_median_crossing(curves["flat-q"], 0.9)
    elapsed = time.perf_counter() - start
    ok = hier_at is not None and (flat_at is None or hier_at < flat_at)
    med = lambda algo: [round(statistics.median(c[i] for c in curves[algo].values()), 2)  # noqa: E731
                        for i in range(min(len(c) for c in curves[algo].values()))]
    report(7, ok, f"HplanQ median >= 0.9 at {hier_at} episodes, flat Q at {flat_at or 'never'} "
           f"(within {done}); medians hplanq {med('hplanq-per-option')} flat {med('flat-q')} ({elapsed:.0f}s)")
    assert ok


# 8 ------------------------------------------------------------------------


def reuse_config(seed: int) -> hrl.TrainConfig:
    return hrl.TrainConfig(
        rollout_steps=64,
        max_episodes=2000,
        option_step_cap=100,
        eval_every=1,
        eval_unit="iterations",
        constants=RewardConstants(c2=NROOMS_C2),
        learner=LearnerConfig(epsilon_start=0.1, epsilon_end=0.1),
        seed=seed,
    )


def test_criterion_8_option_reuse():
    spec = envs.load_env("rooms12-16")
    task = pddl.load_task(spec.domain_file, spec.problem_file)
    ratios, unsolved = [], 0
    for seed in range(5):
        problems = hrl.sample_problems(spec, 8, seed)
        cfg = reuse_config(seed)
        with_reuse = hrl.solve_sequence(spec, task, problems, cfg, reuse=True)
        without = hrl.solve_sequence(spec, task, problems, cfg, reuse=False)
        unsolved += with_reuse.solved.count(False) + without.solved.count(False)
        ratios.append(with_reuse.total_steps / without.total_steps)
    median = statistics.median(ratios)
    ok = median <= 0.8
    report(8, ok, f"median steps ratio {median:.3f} (per seed {', '.join(f'{r:.3f}' for r in ratios)}); "
           f"{unsolved} problems hit the episode cap")
    assert ok


# 9 ------------------------------------------------------------------------


def test_criterion_9_intrinsic_reward():
    parl = parl_for("doorkey8")
    goal = parl.s0.goal
    pickup = parl.option("(pickup k-yellow-0 r-0-0)")

    def dk(pos, carried=False, locked=True):
        return envs.GridState(pos, 0, "k-yellow-0" if carried else None, (locked,),
                              (None,) if carried else ((5, 3),), (), goal)

    snap = context_and_frame(pickup, dk((2, 2)), parl.mapper, RewardConstants(c1=-1.0, c2=MINIGRID_C2))
    tagged = [
        (intrinsic_reward(snap, pickup, dk((1, 1)), parl.mapper), -0.9 / 1024),
        (intrinsic_reward(snap, pickup, dk((1, 1), locked=False), parl.mapper), -1 - 0.9 / 1024),
        (intrinsic_reward(snap, pickup, dk((2, 2), carried=True), parl.mapper), 1.0),
    ]
    tagged_ok = all(abs(got - want) < 1e-12 for got, want in tagged)

    rng = random.Random(9)
    m = parl.mdp
    recount_ok = 0
    for _ in range(20):
        entry = rng.randrange(len(m))
        options = [o for o in parl.options if not o.is_goal and parl.initiation(o, m.states[entry])]
        option = rng.choice(options)
        snap = context_and_frame(option, m.states[entry], parl.mapper)
        s = m.states[rng.randrange(len(m))]
        label = set(parl.task.atoms(parl.mapper(s)))
        missing = sum(1 for f in parl.task.atoms(snap.frame) if f not in label)
        term = set(parl.task.atoms(option.operator.prevail | option.operator.add)) <= label
        want = snap.c1 * missing + (snap.termination_bonus if term else snap.c2)
        recount_ok += abs(intrinsic_reward(snap, option, s, parl.mapper) - want) < 1e-12
    ok = tagged_ok and recount_ok == 20
    report(9, ok, f"tagged examples {'match' if tagged_ok else 'differ'}; {recount_ok}/20 random recounts match")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([str(Path(__file__)), "-q", "-s"]))
