import textwrap

import pytest

import oracles
import traces
from planhrl import cli, hrl

MAZE = str(oracles.MAZE_DOMAIN)
ROOMS = str(oracles.ROOMS_DOMAIN)
DOORKEY = str(oracles.SHIPPED_PROBLEMS["doorkey"][1])
NINE = str(oracles.SHIPPED_PROBLEMS["nine-rooms"][1])
ROOMS_PROBLEM = str(oracles.SHIPPED_PROBLEMS["rooms-16-12"][1])


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def small_config(tmp_path, algorithm="hplanq-per-option", seeds="0-4"):
    path = tmp_path / "small.ini"
    path.write_text(textwrap.dedent(f"""\
        [run]
        env = rooms4-20
        algorithm = {algorithm}
        seeds = {seeds}
        output = out

        [train]
        max_episodes = 40
        rollout_steps = 128
        option_step_cap = 60
        eval_every = 20
        eval_seeds = 0-4
        """))
    return path


def test_parse_doorkey(capsys):
    code, out, _ = run(capsys, "parse", MAZE, DOORKEY)
    assert code == 0
    assert "10 operators, 8 facts" in out
    assert "link" in out and "keymatch" in out


def test_parse_rooms(capsys):
    code, out, _ = run(capsys, "parse", ROOMS, ROOMS_PROBLEM)
    assert code == 0 and "44 operators" in out


def test_parse_error_exit_code(capsys, tmp_path):
    bad = tmp_path / "bad.pddl"
    bad.write_text("(define (domain broken)\n  (:predicates (p ?x)\n")
    code, _, err = run(capsys, "parse", str(bad), DOORKEY)
    assert code == 2
    assert "error: " in err and ":" in err.split("error: ")[1]


def test_plan_doorkey_trace(capsys):
    code, out, _ = run(capsys, "plan", MAZE, DOORKEY)
    assert code == 0
    assert traces.blocks(out) == traces.blocks(traces.DOORKEY_TRACE)


def test_plan_nine_rooms(capsys):
    code, out, _ = run(capsys, "plan", MAZE, NINE, "--heuristic", "blind")
    lines = out.splitlines()
    names = [lines[i + 1] for i, ln in enumerate(lines) if ln.startswith("action:")]
    assert code == 0 and names == traces.NINE_ROOMS_PLAN


def test_plan_from_satisfied_state(capsys, tmp_path):
    start = tmp_path / "start.txt"
    start.write_text("(at-agent r-1-0)\n(unlocked d-yellow-0-0-1-0)\n(empty-hand)\n(at k-yellow-0 r-0-0)\n")
    code, out, _ = run(capsys, "plan", MAZE, DOORKEY, "--from", str(start))
    assert code == 0 and out == "empty plan\n"


def test_plan_unsolvable(capsys, tmp_path):
    prob = tmp_path / "stuck.pddl"
    prob.write_text(
        "(define (problem stuck) (:domain rooms) (:objects a b - room)"
        " (:init (in-room a)) (:goal (and (in-room b))))"
    )
    code, _, err = run(capsys, "plan", ROOMS, str(prob))
    assert code == 1 and "unsolvable" in err


def test_plan_node_budget(capsys):
    code, _, err = run(capsys, "plan", MAZE, NINE, "--node-budget", "3")
    assert code == 3 and "budget" in err


def test_derive_options(capsys):
    code, out, _ = run(capsys, "derive-options", ROOMS, ROOMS_PROBLEM)
    assert code == 0 and "; 45 options" in out


def test_train_writes_one_csv_per_seed_plus_aggregate(capsys, tmp_path):
    cfg = small_config(tmp_path)
    code, out, _ = run(capsys, "train", str(cfg), "--output", str(tmp_path / "out"))
    assert code == 0
    csvs = sorted(p.name for p in (tmp_path / "out").glob("*.csv"))
    assert csvs == ["aggregate.csv"] + [f"seed-{i}.csv" for i in range(5)]
    agg = (tmp_path / "out" / "aggregate.csv").read_text().splitlines()
    assert agg[0].startswith("#") and agg[1].startswith("row,episodes,success_mean,success_min,success_max")
    assert len(agg) == 2 + 2  # two evaluations


def test_flat_override(capsys, tmp_path):
    cfg = small_config(tmp_path, seeds="0")
    code, _, _ = run(capsys, "train", str(cfg), "--algorithm", "flat-q", "--output", str(tmp_path / "flat"))
    assert code == 0
    assert (tmp_path / "flat" / "seed-0" / "flat.qtable").exists()


def test_identical_configs_identical_outputs(capsys, tmp_path):
    cfg = small_config(tmp_path, seeds="2")
    for d in ("a", "b"):
        assert run(capsys, "train", str(cfg), "--output", str(tmp_path / d))[0] == 0
    for name in ("seed-2.csv", "aggregate.csv"):
        assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()


def test_resume_continues_the_curve(capsys, tmp_path):
    cfg = small_config(tmp_path, seeds="0")
    out = tmp_path / "run"
    assert run(capsys, "train", str(cfg), "--output", str(out))[0] == 0
    text = cfg.read_text().replace("max_episodes = 40", "max_episodes = 80")
    cfg.write_text(text)
    assert run(capsys, "train", str(cfg), "--output", str(out), "--resume")[0] == 0
    eps = [int(r["episodes"]) for r in hrl.read_csv(out / "seed-0.csv")]
    assert len(eps) == 4 and eps == sorted(eps) and len(set(eps)) == 4


def test_evaluate_checkpoints(capsys, tmp_path):
    cfg = small_config(tmp_path, seeds="1")
    run(capsys, "train", str(cfg), "--output", str(tmp_path / "ev"))
    code, out, _ = run(capsys, "evaluate", str(cfg), "--checkpoints", str(tmp_path / "ev"), "--episodes", "0-3")
    assert code == 0 and out.startswith("seed 1: success")


def test_evaluate_without_checkpoint(capsys, tmp_path):
    cfg = small_config(tmp_path, seeds="1")
    code, _, err = run(capsys, "evaluate", str(cfg), "--checkpoints", str(tmp_path / "none"))
    assert code == 2 and "no checkpoint" in err


def test_output_root_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "root"))
    cfg = small_config(tmp_path, seeds="0")
    assert run(capsys, "train", str(cfg))[0] == 0
    assert (tmp_path / "root" / "out" / "seed-0.csv").exists()


def test_bad_config(capsys, tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[run]\nenv = nowhere\n")
    code, _, err = run(capsys, "train", str(path))
    assert code == 2 and "error" in err


def test_config_rejects_unknown_algorithm(tmp_path):
    path = small_config(tmp_path, algorithm="ppo")
    with pytest.raises(cli.ConfigError):
        cli.load_config(path)


def test_verify_doorkey_bundle(capsys):
    code, out, _ = run(capsys, "verify", "doorkey")
    assert code == 0
    assert all(line.startswith("PASS") for line in out.splitlines())
    assert "100 mutations" in out


def test_verify_teleport_bundle(capsys):
    code, out, _ = run(capsys, "verify", "doorkey-teleport")
    assert code == 1
    assert out.splitlines()[0].startswith("FAIL proper: witness")


def test_verify_empty_operator_task(capsys):
    code, out, _ = run(capsys, "verify", "one-cell")
    assert code == 0
    assert "PASS option count: 1 options, 0 operators" in out
