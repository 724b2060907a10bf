"""Command-line entry point: ``planhrl {parse,plan,derive-options,train,evaluate,verify}``.

Exit codes: 0 success, 1 check failed or task unsolvable, 2 bad input (PDDL, config,
usage), 3 planner node budget exhausted.
"""

from __future__ import annotations

import argparse
import configparser
import os
import statistics
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from planhrl import envs, hrl, parl as parlmod, pddl, verify
from planhrl.agents import LearnerConfig
from planhrl.parl import RewardConstants
from planhrl.planner import DEFAULT_NODE_BUDGET, HEURISTICS, NodeBudgetExceeded, astar
from planhrl.planning import format_trace, parse_fact_lines

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_BUDGET = 0, 1, 2, 3
OUTPUT_ENV = "PLANHRL_OUT"
CONFIG_DIR = Path(__file__).parent / "data" / "configs"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: envs.EnvSpec
    domain: Path
    problem: Path
    algorithm: str
    train: hrl.TrainConfig
    seeds: list[int]
    output: Path
    verify: dict[str, int] = field(default_factory=dict)


def _int_list(text: str) -> list[int]:
    """``0, 2, 5-9`` -> [0, 2, 5, 6, 7, 8, 9]."""
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _resolve(base: Path, value: str, fallback_dir: Path, suffix: str = "") -> Path:
    p = Path(value)
    for cand in (p, base / p, fallback_dir / p, fallback_dir / (value + suffix)):
        if cand.exists():
            return cand
    raise ConfigError(f"cannot find {value!r}")


def load_config(path: str | Path, algorithm: str | None = None, seed: int | None = None) -> RunConfig:
    """Read an INI run configuration; ``algorithm`` and ``seed`` override the file."""
    path = Path(path)
    if not path.exists() and not path.suffix and (CONFIG_DIR / f"{path}.ini").exists():
        path = CONFIG_DIR / f"{path}.ini"
    parser = configparser.ConfigParser(inline_comment_prefixes=(";",))
    if not parser.read(path, encoding="utf8"):
        raise ConfigError(f"cannot read config {path}")
    base = path.parent
    try:
        run = parser["run"]
        env_path = _resolve(base, run["env"], envs.LAYOUT_DIR, ".ini")
        spec = envs.load_env(env_path)
        domain = _resolve(base, run.get("domain", spec.domain_file or ""), envs.PDDL_DIR)
        problem = _resolve(base, run.get("problem", spec.problem_file or ""), envs.PDDL_DIR)
        algo = algorithm or run.get("algorithm", "hplanq-per-option")
        seeds = [seed] if seed is not None else _int_list(run.get("seeds", "0"))
        out = Path(run.get("output", f"runs/{path.stem}"))
        if not out.is_absolute():
            out = Path(os.environ.get(OUTPUT_ENV, ".")) / out

        t = parser["train"] if parser.has_section("train") else {}
        lsec = parser["learner"] if parser.has_section("learner") else {}
        default_c2 = parlmod.MINIGRID_C2 if spec.minigrid else parlmod.NROOMS_C2
        learner = LearnerConfig(
            alpha=float(lsec.get("alpha", 0.1)),
            gamma=float(lsec.get("gamma", 0.99)),
            epsilon_start=float(lsec.get("epsilon_start", 1.0)),
            epsilon_end=float(lsec.get("epsilon_end", 0.05)),
            decay_fraction=float(lsec.get("decay_fraction", 0.5)),
            default_value=float(lsec.get("default_value", 0.0)),
        )
        constants = RewardConstants(
            c1=float(t.get("c1", parlmod.DEFAULT_C1)),
            c2=float(t.get("c2", default_c2)),
            termination_bonus=float(t.get("termination_bonus", parlmod.DEFAULT_BONUS)),
        )
        max_eps = t.get("max_episodes")
        cap = t.get("option_step_cap")
        train_seeds = t.get("train_seeds")
        stop = t.get("stop_at_success")
        replay = t.get("replay_size")
        train = hrl.TrainConfig(
            algorithm=algo,
            iterations=int(t.get("iterations", 1_000_000)),
            rollout_steps=int(t.get("rollout_steps", 256)),
            max_episodes=int(max_eps) if max_eps else None,
            option_step_cap=int(cap) if cap else None,
            constants=constants,
            learner=learner,
            eval_every=int(t.get("eval_every", 1000)),
            eval_unit=t.get("eval_unit", "episodes"),
            eval_seeds=tuple(_int_list(t.get("eval_seeds", "0-99"))),
            train_seeds=tuple(_int_list(train_seeds)) if train_seeds else None,
            heuristic=t.get("heuristic", "blind"),
            use_extrinsic=str(t.get("use_extrinsic", "false")).lower() in ("1", "true", "yes"),
            replay_size=int(replay) if replay else None,
            stop_at_success=float(stop) if stop else None,
        )
        vsec = parser["verify"] if parser.has_section("verify") else {}
        ver = {
            "mutations": int(vsec.get("mutations", 100)),
            "theorem2_trials": int(vsec.get("theorem2_trials", 100)),
            "seed": int(vsec.get("seed", 0)),
            "reset_seed": int(vsec.get("reset_seed", 0)),
        }
    except (KeyError, ValueError, envs.LayoutError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig(spec, domain, problem, algo, train, seeds, out, ver)


# ---------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> int:
    dom_text = Path(args.domain).read_text(encoding="utf8")
    prob_text = Path(args.problem).read_text(encoding="utf8")
    domain = pddl.parse_domain(dom_text)
    problem = pddl.parse_problem(prob_text)
    task = pddl.ground(domain, problem)
    statics = sorted(pddl.static_predicates(domain))
    print(f"domain {domain.name}: {len(domain.predicates)} predicates, {len(domain.actions)} actions")
    print(f"problem {problem.name}: {len(problem.objects)} objects, {len(problem.init)} init atoms")
    print(f"{len(task.operators)} operators, {len(task.facts)} facts")
    print(f"static predicates pruned: {', '.join(statics) if statics else 'none'} ({len(task.static_facts)} static facts)")
    return EXIT_OK


def cmd_plan(args) -> int:
    task = pddl.load_task(args.domain, args.problem)
    start = task.init
    if args.start:
        start = parse_fact_lines(task, Path(args.start).read_text(encoding="utf8"))
    try:
        plan = astar(task, start=start, heuristic=args.heuristic, node_budget=args.node_budget)
    except NodeBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    if plan is None:
        print("unsolvable", file=sys.stderr)
        return EXIT_FAIL
    sys.stdout.write(format_trace(task, start, plan.operators))
    return EXIT_OK


def cmd_derive_options(args) -> int:
    task = pddl.load_task(args.domain, args.problem)
    options = parlmod.derive_options(task)
    sys.stdout.write(parlmod.format_options(task, options))
    print(f"; {len(options)} options ({len(task.operators)} operator options + goal)")
    return EXIT_OK


def _parl_for(cfg: RunConfig, reset_seed: int = 0) -> parlmod.ParlTask:
    task = pddl.load_task(cfg.domain, cfg.problem)
    return parlmod.make_parl(cfg.env, task, reset_seed)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.algorithm, args.seed)
    if args.output:
        cfg.output = Path(args.output)
    cfg.output.mkdir(parents=True, exist_ok=True)
    parl = _parl_for(cfg)
    logs = {}
    for seed in cfg.seeds:
        tcfg = _with_seed(cfg.train, seed)
        ckpt = cfg.output / f"seed-{seed}"
        csv_path = cfg.output / f"seed-{seed}.csv"
        resumed = args.resume and (ckpt / "trainer.txt").exists()
        trainer = hrl.Trainer.resume(parl, tcfg, ckpt) if resumed else hrl.Trainer(parl, tcfg)
        log = trainer.run()
        trainer.save(ckpt)
        log.to_csv(csv_path, append=resumed)
        logs[seed] = hrl.read_csv(csv_path)
        last = log.rows[-1] if log.rows else None
        summary = f"success {last.success_rate:.3f}, mean length {last.mean_episode_length:.1f}" if last else "no evaluations"
        print(f"seed {seed}: {trainer.episodes} episodes, {trainer.env_steps} env steps, {summary}")
    write_aggregate(logs, cfg.output / "aggregate.csv")
    print(f"wrote {len(cfg.seeds) + 1} CSV files to {cfg.output}")
    return EXIT_OK


def _with_seed(train: hrl.TrainConfig, seed: int) -> hrl.TrainConfig:
    return replace(train, seed=seed)


def write_aggregate(logs: dict[int, list[dict[str, str]]], path: Path) -> None:
    """Mean, min and max over seeds, row by row (rows align on evaluation index)."""
    n = min((len(rows) for rows in logs.values()), default=0)
    with open(path, "w") as fh:
        fh.write(f"# {hrl.CSV_VERSION} aggregate over seeds {sorted(logs)}\n")
        fh.write("row,episodes,success_mean,success_min,success_max,length_mean,length_min,length_max\n")
        for i in range(n):
            rows = [logs[s][i] for s in sorted(logs)]
            eps = statistics.mean(int(r["episodes"]) for r in rows)
            succ = [float(r["success_rate"]) for r in rows]
            length = [float(r["mean_episode_length"]) for r in rows]
            fh.write(
                f"{i},{eps:.1f},{statistics.mean(succ):.6f},{min(succ):.6f},{max(succ):.6f},"
                f"{statistics.mean(length):.6f},{min(length):.6f},{max(length):.6f}\n"
            )


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.algorithm, args.seed)
    root = Path(args.checkpoints) if args.checkpoints else cfg.output
    parl = _parl_for(cfg)
    episodes = _int_list(args.episodes) if args.episodes else list(cfg.train.eval_seeds)
    for seed in cfg.seeds:
        ckpt = root / f"seed-{seed}"
        if not (ckpt / "trainer.txt").exists():
            print(f"error: no checkpoint at {ckpt}", file=sys.stderr)
            return EXIT_INPUT
        trainer = hrl.Trainer.resume(parl, _with_seed(cfg.train, seed), ckpt)
        res = trainer.evaluate(episodes)
        flag = f", missing options: {', '.join(sorted(res.missing))}" if res.missing else ""
        print(f"seed {seed}: success {res.success_rate:.3f}, mean length {res.mean_length:.1f}{flag}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    v = cfg.verify
    parl = _parl_for(cfg, v["reset_seed"])
    task = parl.task
    results: list[tuple[str, bool, str]] = []

    proper = parlmod.is_proper(parl)
    detail = "" if proper.holds else f"witness {proper.witness}: {proper.detail}"
    results.append(("proper", proper.holds, detail))
    n_ops = len(task.operators)
    results.append(("option count", len(parl.options) == n_ops + 1, f"{len(parl.options)} options, {n_ops} operators"))

    if proper.holds:
        base = verify.frame_constrained_policy(parl.mdp)
        thm1 = verify.check_theorem1(parl, base)
        fp = thm1.frame_preserving
        results.append(("frame preserving", fp.holds, "" if fp.holds else f"witness {fp.witness}: {fp.detail}"))
        b = thm1.bisim
        results.append((
            "frame preservation implies bisimulation", thm1.implication_holds,
            f"bisimilar={b.holds} forth={b.forth} back={b.back} goal={b.goal} {b.detail}".rstrip(),
        ))
        mut = verify.mutation_harness(parl, v["mutations"], v["seed"])
        results.append((
            "mutated policies", not mut.falsified,
            f"{mut.trials} mutations, {mut.frame_preserving} frame preserving, {mut.bisimilar} bisimilar,"
            f" {len(mut.falsified)} falsified",
        ))
    else:
        results.append(("bisimulation", True, "skipped: needs a proper task"))
    t2 = verify.theorem2_suite(parl, v["theorem2_trials"], v["seed"])
    results.append(("frame monotonicity", t2.holds, f"{t2.trials} nested frame pairs, {t2.strict} strict, {len(t2.failures)} failures"))

    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="planhrl", description="Planning-annotated hierarchical RL toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse and ground a domain/problem pair")
    p.add_argument("domain")
    p.add_argument("problem")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("plan", help="print an A* plan as a state/action trace")
    p.add_argument("domain")
    p.add_argument("problem")
    p.add_argument("--heuristic", choices=HEURISTICS, default="blind")
    p.add_argument("--from", dest="start", help="file listing the start state, one fact per line")
    p.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("derive-options", help="list plan options with initiation and termination facts")
    p.add_argument("domain")
    p.add_argument("problem")
    p.set_defaults(func=cmd_derive_options)

    for name, func, helptext in (
        ("train", cmd_train, "train option policies per seed, writing CSV logs and checkpoints"),
        ("evaluate", cmd_evaluate, "greedy evaluation of saved checkpoints"),
        ("verify", cmd_verify, "properness, frame preservation and theorem checks"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="INI run configuration (path or shipped name)")
        p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        if name != "verify":
            p.add_argument("--algorithm", choices=hrl.ALGORITHMS)
        if name == "train":
            p.add_argument("--output", help=f"output directory (default from config, under ${OUTPUT_ENV})")
            p.add_argument("--resume", action="store_true", help="continue from checkpoints in the output directory")
        if name == "evaluate":
            p.add_argument("--checkpoints", help="directory holding seed-N checkpoints")
            p.add_argument("--episodes", help="reset seeds to evaluate, e.g. 0-99")
        p.set_defaults(func=func)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except pddl.PddlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, envs.LayoutError, parlmod.MappingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except hrl.TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
