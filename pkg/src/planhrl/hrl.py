"""Online option learning with a planner as the high-level controller."""

from __future__ import annotations

import ast
import csv
import random
import re
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Hashable

from planhrl import envs
from planhrl.agents import LearnerConfig, QTable, q_update, select_action
from planhrl.parl import (
    OptionSpec,
    ParlTask,
    RewardConstants,
    frame_of,
    FrameSnapshot,
    goal_snapshot,
    intrinsic_reward,
    make_parl,
)
from planhrl.planner import astar

ALGORITHMS = ("hplanq-per-option", "hplanq-shared", "flat-q")
FLAT_ID = "FLAT"
CSV_VERSION = "planhrl-log v1"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    algorithm: str = "hplanq-per-option"
    iterations: int = 1_000_000
    rollout_steps: int = 256
    max_episodes: int | None = None
    option_step_cap: int | None = None  # default: horizon // 4
    constants: RewardConstants = field(default_factory=RewardConstants)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    eval_every: int = 1000
    eval_unit: str = "episodes"  # or "iterations"
    eval_seeds: tuple[int, ...] = tuple(range(100))
    train_seeds: tuple[int, ...] | None = None  # reset seeds drawn for training episodes
    seed: int = 0
    heuristic: str = "blind"
    use_extrinsic: bool = False
    replay_size: int | None = None  # shared variant: old records replayed per phase
    buffer_capacity: int = 50_000
    stop_at_success: float | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.rollout_steps <= 0 or self.eval_every <= 0 or self.buffer_capacity <= 0:
            raise ValueError("rollout_steps, eval_every and buffer_capacity must be positive")
        if self.option_step_cap is not None and self.option_step_cap <= 0:
            raise ValueError("option_step_cap must be positive")
        if self.max_episodes is not None and self.max_episodes < 0:
            raise ValueError("max_episodes must be non-negative")
        if self.eval_unit not in ("episodes", "iterations"):
            raise ValueError("eval_unit must be 'episodes' or 'iterations'")

    @property
    def flat(self) -> bool:
        return self.algorithm == "flat-q"


@dataclass
class Record:
    option: str
    s: envs.GridState
    a: int
    r_extrinsic: float
    r_intrinsic: float
    t: envs.GridState
    done: bool  # option termination or environment goal
    env_done: bool


class TrajectoryBuffer:
    """Stored transitions, grouped by rollout phase."""

    def __init__(self, capacity: int = 50_000):
        self.records: deque[Record] = deque(maxlen=capacity)
        self.fresh: list[Record] = []

    def add(self, rec: Record) -> None:
        self.fresh.append(rec)

    def extend(self, recs) -> None:
        self.fresh.extend(recs)

    def take_fresh(self, retain: bool) -> list[Record]:
        out = self.fresh
        self.fresh = []
        if retain:
            self.records.extend(out)
        return out

    def __len__(self) -> int:
        return len(self.fresh) + len(self.records)


def option_key(option: OptionSpec, s: envs.GridState) -> tuple:
    """State key for option tables: operator options ignore the goal cell, so they transfer across goals."""
    k = s.key()
    return k[:-1] if not option.is_goal else k


class OptionRegistry:
    """Options seen per abstract state, plus their lazily created tables."""

    def __init__(self, n_actions: int, shared: bool = False, default_value: float = 0.0):
        self.n_actions = n_actions
        self.shared = shared
        self.default_value = default_value
        self.by_abstract: dict[frozenset[int], set[str]] = {}
        self.tables: dict[str, QTable] = {}
        self.shared_table = QTable(n_actions, default_value) if shared else None

    def note_plan(self, states: list[frozenset[int]], option_ids: list[str]) -> None:
        for ls, oid in zip(states, option_ids):
            self.by_abstract.setdefault(ls, set()).add(oid)

    def table(self, option: OptionSpec, create: bool = True) -> QTable | None:
        if self.shared:
            return self.shared_table
        t = self.tables.get(option.id)
        if t is None and create:
            t = self.tables[option.id] = QTable(self.n_actions, self.default_value)
        return t

    def key(self, option: OptionSpec, s: envs.GridState) -> Hashable:
        k = option_key(option, s)
        return (option.id, k) if self.shared else k

    def has_policy(self, option: OptionSpec) -> bool:
        if self.shared:
            return any(k[0] == option.id for k in self.shared_table.values)
        return option.id in self.tables


class Controller:
    """Planner-backed option selection with plans memoised per (abstract state, goal)."""

    def __init__(self, parl: ParlTask, heuristic: str = "blind"):
        self.parl = parl
        self.heuristic = heuristic
        self.cache: dict[tuple[frozenset[int], frozenset[int]], list] = {}
        self.planner_calls = 0

    def plan(self, current: frozenset[int], goal: frozenset[int]):
        key = (current, goal)
        hit = self.cache.get(key)
        if hit is None:
            self.planner_calls += 1
            plan = astar(self.parl.task, start=current, heuristic=self.heuristic, goal=goal)
            if plan is None:
                atoms = self.parl.task.atoms(current)
                raise TrainingError(f"no plan from abstract state {atoms}")
            hit = self.cache[key] = list(plan.operators)
        return hit


def episode_goal(parl: ParlTask, s: envs.GridState) -> frozenset[int]:
    """Planning goal for the episode containing ``s``."""
    if parl.spec.minigrid:
        return parl.task.goal
    return parl.task.ids(envs.goal_atoms(parl.spec, s))


def select_option(
    registry: OptionRegistry, controller: Controller, current: frozenset[int], goal: frozenset[int]
) -> OptionSpec:
    """First operator of a plan from ``current``, or the goal option once the abstract goal holds."""
    parl = controller.parl
    if goal <= current:
        registry.note_plan([current], [parl.goal_option.id])
        return parl.goal_option
    ops = controller.plan(current, goal)
    states = [current]
    for op in ops[:-1]:
        states.append((states[-1] - op.delete) | op.add)
    registry.note_plan(states, [op.name for op in ops])
    return parl.option(ops[0].name)


def snapshot_for(parl: ParlTask, option: OptionSpec, s: envs.GridState, constants: RewardConstants) -> FrameSnapshot:
    if option.is_goal:
        return goal_snapshot(s, constants)
    context, frame = frame_of(option.operator, parl.mapper(s))
    return FrameSnapshot(s, context, frame, constants.c1, constants.c2, constants.termination_bonus)


def option_done(parl: ParlTask, option: OptionSpec, goal: frozenset[int], s: envs.GridState) -> bool:
    if option.is_goal:
        return envs.is_goal(parl.spec, s)
    return option.term_facts <= parl.mapper(s)


def rollout_option(
    parl: ParlTask,
    option: OptionSpec,
    table: QTable,
    key_fn: Callable[[envs.GridState], Hashable],
    state: envs.GridState,
    snapshot: FrameSnapshot,
    cap: int,
    epsilon: float,
    rng: random.Random,
    goal: frozenset[int] | None = None,
) -> tuple[list[Record], str, envs.GridState, bool]:
    """Run one option call-and-return style.

    Returns ``(records, how, final_state, episode_over)`` where ``how`` is one of
    ``immediate``, ``terminated``, ``env-done`` or ``cap``.
    """
    spec = parl.spec
    if option_done(parl, option, goal, state):
        return [], "immediate", state, False
    records = []
    s = state
    is_goal = parl.is_env_goal
    for _ in range(cap):
        a = select_action(table, key_fn(s), epsilon, rng)
        t, r_e, env_done = envs.step(spec, s, a)
        r_i = intrinsic_reward(snapshot, option, t, parl.mapper, is_goal)
        term = option_done(parl, option, goal, t)
        at_goal = envs.is_goal(spec, t)
        records.append(Record(option.id, s, a, r_e, r_i, t, term or at_goal, env_done))
        s = t
        if term:
            return records, "terminated", s, env_done
        if env_done:
            return records, "env-done", s, True
    return records, "cap", s, False


@dataclass
class EvalResult:
    success_rate: float
    mean_length: float
    option_stats: dict[str, tuple[int, int, int]]  # id -> (successes, calls, steps)
    missing: set[str] = field(default_factory=set)


@dataclass
class LogRow:
    iteration: int
    episodes: int
    env_steps: int
    success_rate: float
    mean_episode_length: float
    option_stats: dict[str, tuple[int, int, int]]


@dataclass
class EpisodeRecord:
    episode: int
    env_steps: int
    ret: float
    success: bool
    length: int


@dataclass
class TrainingLog:
    rows: list[LogRow] = field(default_factory=list)
    episodes: list[EpisodeRecord] = field(default_factory=list)
    option_ids: list[str] = field(default_factory=list)

    def first_episode_reaching(self, threshold: float) -> int | None:
        for row in self.rows:
            if row.success_rate >= threshold:
                return row.episodes
        return None

    def to_csv(self, path: str | Path, append: bool = False) -> None:
        """Write evaluation rows; ``append`` adds rows to an existing log from an earlier run."""
        cols = ["iteration", "episodes", "env_steps", "success_rate", "mean_episode_length"]
        for oid in self.option_ids:
            cols += [f"{oid}:success", f"{oid}:length"]
        append = append and Path(path).exists()
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if not append:
                fh.write(f"# {CSV_VERSION}\n")
                w.writerow(cols)
            for r in self.rows:
                line = [r.iteration, r.episodes, r.env_steps, f"{r.success_rate:.6f}", f"{r.mean_episode_length:.6f}"]
                for oid in self.option_ids:
                    succ, calls, steps = r.option_stats.get(oid, (0, 0, 0))
                    line += [f"{succ / calls:.6f}" if calls else "", f"{steps / calls:.6f}" if calls else ""]
                w.writerow(line)


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass
class Trainer:
    """Mutable training state; :func:`train` drives it, checkpoints persist it."""

    parl: ParlTask
    cfg: TrainConfig
    registry: OptionRegistry | None = None
    flat_table: QTable | None = None
    iteration: int = 0
    episodes: int = 0
    env_steps: int = 0
    rng: random.Random = None
    log: TrainingLog = field(default_factory=TrainingLog)

    def __post_init__(self):
        n = len(self.parl.spec.actions)
        dv = self.cfg.learner.default_value
        if self.rng is None:
            self.rng = random.Random(self.cfg.seed)
        if self.cfg.flat:
            self.flat_table = self.flat_table or QTable(n, dv)
            self.log.option_ids = []
        else:
            shared = self.cfg.algorithm == "hplanq-shared"
            self.registry = self.registry or OptionRegistry(n, shared, dv)
            self.log.option_ids = [o.id for o in self.parl.options]
        self.controller = Controller(self.parl, self.cfg.heuristic)
        self.buffer = TrajectoryBuffer(self.cfg.buffer_capacity)
        self._state: envs.GridState | None = None
        self._goal: frozenset[int] | None = None
        self._ret = 0.0
        self._next_eval = (self._progress() // self.cfg.eval_every + 1) * self.cfg.eval_every
        self.solved = False

    # -- helpers
    @property
    def spec(self) -> envs.EnvSpec:
        return self.parl.spec

    @property
    def cap(self) -> int:
        return self.cfg.option_step_cap or max(1, self.spec.horizon // 4)

    def epsilon(self) -> float:
        budget = self.cfg.max_episodes or max(1, self.cfg.iterations)
        done = self.episodes if self.cfg.max_episodes else self.iteration
        return self.cfg.learner.epsilon(done / budget)

    def _budget_left(self) -> bool:
        return self.cfg.max_episodes is None or self.episodes < self.cfg.max_episodes

    def _new_episode(self) -> None:
        seeds = self.cfg.train_seeds
        seed = self.rng.choice(seeds) if seeds else self.rng.randrange(2**31)
        self._state = envs.reset(self.spec, seed)
        self._goal = episode_goal(self.parl, self._state)
        self._ret = 0.0

    def _end_episode(self, success: bool) -> None:
        self.episodes += 1
        s = self._state
        self.log.episodes.append(EpisodeRecord(self.episodes, self.env_steps, self._ret, success, s.step_count))
        self._state = None

    # -- phases
    def rollout_phase(self) -> None:
        steps = 0
        eps = self.epsilon()
        while steps < self.cfg.rollout_steps and self._budget_left():
            if self._state is None:
                self._new_episode()
            s = self._state
            if self.cfg.flat:
                a = select_action(self.flat_table, s.key(), eps, self.rng)
                t, r, over = envs.step(self.spec, s, a)
                recs = [Record(FLAT_ID, s, a, r, 0.0, t, envs.is_goal(self.spec, t), over)]
                final = t
            else:
                option = select_option(self.registry, self.controller, self.parl.mapper(s), self._goal)
                table = self.registry.table(option)
                snap = snapshot_for(self.parl, option, s, self.cfg.constants)
                recs, how, final, over = rollout_option(
                    self.parl, option, table, lambda x, o=option: self.registry.key(o, x),
                    s, snap, self.cap, eps, self.rng, self._goal,
                )
                if how == "immediate":
                    raise TrainingError(f"{option.id} terminates on entry; the plan cannot progress")
            self.buffer.extend(recs)
            self._ret += sum(rec.r_extrinsic for rec in recs)
            steps += len(recs)
            self.env_steps += len(recs)
            self._state = final
            if over:
                self._end_episode(envs.is_goal(self.spec, final))

    def train_phase(self) -> None:
        cfg = self.cfg
        lc = cfg.learner
        shared = cfg.algorithm == "hplanq-shared"
        fresh = self.buffer.take_fresh(retain=shared)
        if cfg.flat:
            for rec in reversed(fresh):
                q_update(self.flat_table, rec.s.key(), rec.a, rec.r_extrinsic, rec.t.key(), rec.done, lc)
            return
        if not shared:
            for rec in reversed(fresh):
                option = self.parl.option(rec.option)
                r = rec.r_intrinsic + (rec.r_extrinsic if cfg.use_extrinsic else 0.0)
                table = self.registry.table(option)
                q_update(table, self.registry.key(option, rec.s), rec.a, r, self.registry.key(option, rec.t), rec.done, lc)
            return
        batch = list(reversed(fresh))
        old = list(self.buffer.records)[: max(0, len(self.buffer.records) - len(fresh))]
        n_replay = cfg.replay_size if cfg.replay_size is not None else len(fresh)
        if old and n_replay:
            batch += [old[self.rng.randrange(len(old))] for _ in range(n_replay)]
        for rec in batch:
            self._relabelled_update(rec)

    def _relabelled_update(self, rec: Record) -> None:
        """Update every option instantiated at L(s) with its own intrinsic reward for this transition."""
        parl, cfg = self.parl, self.cfg
        ls = parl.mapper(rec.s)
        goal = episode_goal(parl, rec.s)
        for oid in sorted(self.registry.by_abstract.get(ls, set()) | {rec.option}):
            option = parl.option(oid)
            needed = goal if option.is_goal else option.operator.pre
            if not needed <= ls:
                continue
            snap = snapshot_for(parl, option, rec.s, cfg.constants)
            r = intrinsic_reward(snap, option, rec.t, parl.mapper, parl.is_env_goal)
            if cfg.use_extrinsic:
                r += rec.r_extrinsic
            done = option_done(parl, option, goal, rec.t) or envs.is_goal(parl.spec, rec.t)
            q_update(self.registry.shared_table, (oid, option_key(option, rec.s)), rec.a, r,
                     (oid, option_key(option, rec.t)), done, cfg.learner)

    def _progress(self) -> int:
        return self.episodes if self.cfg.eval_unit == "episodes" else self.iteration

    def maybe_evaluate(self, force: bool = False) -> None:
        if not force and self._progress() < self._next_eval:
            return
        while self._next_eval <= self._progress():
            self._next_eval += self.cfg.eval_every
        res = self.evaluate(self.cfg.eval_seeds)
        self.log.rows.append(
            LogRow(self.iteration, self.episodes, self.env_steps, res.success_rate, res.mean_length, res.option_stats)
        )
        if self.cfg.stop_at_success is not None and res.success_rate >= self.cfg.stop_at_success:
            self.solved = True

    def evaluate(self, seeds) -> EvalResult:
        if self.cfg.flat:
            return evaluate_flat(self.parl, self.flat_table, seeds)
        return evaluate(self.parl, self.registry, seeds, self.cap, self.cfg.heuristic, self.controller)

    def run(self, until_episodes: int | None = None) -> TrainingLog:
        """Train until the iteration or episode budget runs out, success is reached, or
        ``until_episodes`` episodes have finished."""
        while self.iteration < self.cfg.iterations and self._budget_left() and not self.solved:
            if until_episodes is not None and self.episodes >= until_episodes:
                break
            self.rollout_phase()
            self.train_phase()
            self.iteration += 1
            self.maybe_evaluate()
        return self.log

    # -- checkpoints
    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = [
            f"algorithm = {self.cfg.algorithm}",
            f"iteration = {self.iteration}",
            f"episodes = {self.episodes}",
            f"env_steps = {self.env_steps}",
            f"rng = {self.rng.getstate()!r}",
        ]
        (d / "trainer.txt").write_text("\n".join(meta) + "\n")
        for old in d.glob("*.qtable"):
            old.unlink()
        if self.cfg.flat:
            self.flat_table.save(d / "flat.qtable")
        elif self.registry.shared:
            self.registry.shared_table.save(d / "shared.qtable")
        else:
            for oid, table in self.registry.tables.items():
                table.save(d / f"{_file_id(oid)}.qtable")
            (d / "options.txt").write_text("".join(f"{_file_id(o)}\t{o}\n" for o in sorted(self.registry.tables)))

    @classmethod
    def resume(cls, parl: ParlTask, cfg: TrainConfig, directory: str | Path) -> Trainer:
        d = Path(directory)
        meta = dict(line.split(" = ", 1) for line in (d / "trainer.txt").read_text().splitlines() if line)
        if meta["algorithm"] != cfg.algorithm:
            raise ValueError("checkpoint was written by a different algorithm")
        trainer = cls(parl, cfg, iteration=int(meta["iteration"]), episodes=int(meta["episodes"]),
                      env_steps=int(meta["env_steps"]))
        trainer.rng.setstate(ast.literal_eval(meta["rng"]))
        load_tables(trainer, d)
        return trainer


def load_tables(trainer: Trainer, directory: str | Path) -> None:
    d = Path(directory)
    if trainer.cfg.flat:
        trainer.flat_table = QTable.load(d / "flat.qtable")
    elif trainer.registry.shared:
        trainer.registry.shared_table = QTable.load(d / "shared.qtable")
    else:
        for line in (d / "options.txt").read_text().splitlines():
            fid, oid = line.split("\t")
            trainer.registry.tables[oid] = QTable.load(d / f"{fid}.qtable")


def _file_id(option_id: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", option_id.lower()).strip("_") or "option"


def train(parl: ParlTask, cfg: TrainConfig, trainer: Trainer | None = None) -> TrainingLog:
    """Alternate rollout and training phases for ``cfg.iterations`` rounds (or the episode budget)."""
    trainer = trainer or Trainer(parl, cfg)
    return trainer.run()


def evaluate(
    parl: ParlTask,
    registry: OptionRegistry,
    seeds,
    option_cap: int | None = None,
    heuristic: str = "blind",
    controller: Controller | None = None,
) -> EvalResult:
    """Greedy hierarchical execution from ``reset(seed)`` for each seed.

    An option without a table counts the episode as a failure and is reported in ``missing``.
    """
    spec = parl.spec
    cap = option_cap or max(1, spec.horizon // 4)
    controller = controller or Controller(parl, heuristic)
    probe = OptionRegistry(registry.n_actions)  # plan bookkeeping only; keeps the real registry untouched
    stats: dict[str, list[int]] = {}
    missing: set[str] = set()
    successes, lengths = 0, []
    rng = random.Random(0)
    for seed in seeds:
        s = envs.reset(spec, seed)
        goal = episode_goal(parl, s)
        over = envs.is_goal(spec, s)
        failed = False
        while not over:
            option = select_option(probe, controller, parl.mapper(s), goal)
            if not registry.has_policy(option):
                missing.add(option.id)
                failed = True
                break
            table = registry.table(option, create=False)
            snap = snapshot_for(parl, option, s, RewardConstants())
            recs, how, s, over = rollout_option(
                parl, option, table, lambda x, o=option: registry.key(o, x), s, snap, cap, 0.0, rng, goal
            )
            st = stats.setdefault(option.id, [0, 0, 0])
            st[0] += how == "terminated"
            st[1] += 1
            st[2] += len(recs)
            if how == "immediate":
                failed = True  # the plan cannot progress; stop rather than spin
                break
        ok = envs.is_goal(spec, s) and not failed
        successes += ok
        lengths.append(s.step_count)
    n = max(1, len(lengths))
    return EvalResult(successes / n, sum(lengths) / n, {k: tuple(v) for k, v in stats.items()}, missing)


def evaluate_flat(parl: ParlTask, table: QTable, seeds) -> EvalResult:
    spec = parl.spec
    successes, lengths = 0, []
    for seed in seeds:
        s = envs.reset(spec, seed)
        done = envs.is_goal(spec, s)
        while not done:
            s, _, done = envs.step(spec, s, table.greedy(s.key()))
        successes += envs.is_goal(spec, s)
        lengths.append(s.step_count)
    n = max(1, len(lengths))
    return EvalResult(successes / n, sum(lengths) / n, {})


def fixed_problem(spec: envs.EnvSpec, start: tuple[int, int], goal: tuple[int, int]) -> envs.EnvSpec:
    """``spec`` with a fixed start and goal cell and nothing randomised."""
    return replace(spec, start=start, goal=goal, randomize=frozenset(), _map_cache={})


def sample_problems(spec: envs.EnvSpec, count: int, seed: int) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """``count`` distinct (start, goal) pairs in different non-corridor rooms."""
    rng = random.Random(seed)
    rooms = [r for r in spec.rooms() if r not in spec.corridors]
    seen = set()
    out = []
    while len(out) < count:
        ra, rb = rng.sample(rooms, 2)
        pair = (rng.choice(sorted(spec.room_cells[ra])), rng.choice(sorted(spec.room_cells[rb])))
        if pair not in seen:
            seen.add(pair)
            out.append(pair)
    return out


@dataclass
class SequenceResult:
    steps: list[int]
    solved: list[bool]

    @property
    def total_steps(self) -> int:
        return sum(self.steps)


def solve_sequence(spec: envs.EnvSpec, task, problems, cfg: TrainConfig, reuse: bool) -> SequenceResult:
    """Train on each fixed problem in turn until greedy execution solves it.

    With ``reuse`` the option tables carry over from one problem to the next;
    otherwise every problem starts from empty tables.
    """
    steps, solved = [], []
    registry = None
    for i, (start, goal) in enumerate(problems):
        p = make_parl(fixed_problem(spec, start, goal), task, 0)
        run_cfg = replace(cfg, eval_seeds=(0,), train_seeds=(0,), stop_at_success=1.0, seed=cfg.seed * 1000 + i)
        trainer = Trainer(p, run_cfg, registry=registry if reuse else None)
        trainer.run()
        steps.append(trainer.env_steps)
        solved.append(trainer.solved)
        registry = trainer.registry
    return SequenceResult(steps, solved)
