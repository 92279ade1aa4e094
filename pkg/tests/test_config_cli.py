"""Config schema validation and command-line behavior."""

import csv
import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nashflow.cli import demo_document, execute_config, main
from nashflow.config import ConfigError, parse_config

# ---------------------------------------------------------------------------
# helpers


def doc_mp(**overrides) -> dict:
    doc = {
        "game": {"type": "generator", "name": "matching_pennies"},
        "learners": {"type": "da", "estimator": "exact"},
        "rounds": 50,
        "seed": 3,
        "output": {"directory": ".", "prefix": "mp"},
    }
    doc.update(overrides)
    return doc


def violations_of(doc) -> list[str]:
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps(doc))
    return err.value.violations


def run_cli(args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "nashflow.cli", *args],
        capture_output=True,
        text=True,
        env=env,
        cwd=Path(__file__).resolve().parent.parent,
    )


# ---------------------------------------------------------------------------
# schema: happy paths


def test_minimal_config_parses_with_defaults_filled():
    cfg = parse_config(json.dumps(doc_mp()))
    assert len(cfg.learners) == 2  # single block broadcast to both players
    echoed = cfg.echo()
    block = echoed["learners"][0]
    assert block["mu"] == {"kind": "inverse_pow", "p": 0.6}
    assert block["lambda"] == {"kind": "inverse_k"}
    assert "p_floor" in block
    assert block["regularizer"] == {"kind": "entropy", "epsilon": 0.1}
    assert echoed["feedback"] == {
        "visibility": "global",
        "temporal": "perfect",
        "noise": "none",
    }


def test_config_round_trip_reparses_equal():
    for doc in (
        doc_mp(),
        demo_document("routing"),
        demo_document("grid"),
        demo_document("dml"),
        {
            "game": {
                "type": "finite",
                "players": 2,
                "actions": [2, 3],
                "payoffs": [[0, 1, 2, 3, 4, 5], [5, 4, 3, 2, 1, 0]],
            },
            "learners": [{"type": "sbr"}, {"type": "da"}],
            "feedback": {"temporal": {"kind": "delayed", "m": 2}},
            "rounds": 7,
        },
    ):
        cfg = parse_config(json.dumps(doc))
        again = parse_config(json.dumps(cfg.echo()))
        assert again == cfg
        assert again.config_hash() == cfg.config_hash()


def test_config_hash_ignores_formatting_but_not_values():
    a = parse_config(json.dumps(doc_mp()))
    b = parse_config(json.dumps(doc_mp(), indent=3, sort_keys=True))
    assert a.config_hash() == b.config_hash()
    c = parse_config(json.dumps(doc_mp(seed=4)))
    assert c.config_hash() != a.config_hash()


def test_per_player_learner_list_and_inline_game():
    doc = {
        "game": {
            "type": "finite",
            "players": 2,
            "actions": [2, 2],
            "payoffs": [[1, -1, -1, 1], [-1, 1, 1, -1]],
            "labels": [["H", "T"], ["h", "t"]],
        },
        "learners": [
            {"type": "fp", "tie_rule": "uniform_over_argmax"},
            {"type": "sbr", "regularizer": {"kind": "entropy", "epsilon": 0.5}},
        ],
        "rounds": 3,
    }
    cfg = parse_config(json.dumps(doc))
    kinds = [c.kind for c in cfg.learner_configs()]
    assert kinds == ["fp", "sbr"]


# ---------------------------------------------------------------------------
# schema: violations, all reported with paths


def test_unknown_learner_type_names_the_field_path():
    (violation,) = violations_of(doc_mp(learners={"type": "nosuchlearner"}))
    assert violation.startswith("$.learners.0.type:")
    assert "'fp'" in violation  # the valid alternatives are listed


def test_wrong_payoff_length_cites_expected_product():
    doc = doc_mp(
        game={
            "type": "finite",
            "players": 2,
            "actions": [2, 2],
            "payoffs": [[1, -1, -1, 1], [1, 2, 3]],
        }
    )
    violations = violations_of(doc)
    assert any(
        v.startswith("$.game.payoffs.1:") and "prod(actions) = 4" in v
        for v in violations
    )


def test_all_violations_reported_not_just_first():
    doc = doc_mp(
        game={
            "type": "finite",
            "players": 2,
            "actions": [2, 2],
            "payoffs": [[1, -1, -1, 1], [1, 2, 3]],
        },
        learners=[{"type": "gd"}, {"type": "fp"}],
    )
    violations = violations_of(doc)
    assert len(violations) >= 2
    assert any("payoffs" in v for v in violations)
    assert any("continuous" in v for v in violations)


def test_malformed_json_is_a_single_tagged_violation():
    with pytest.raises(ConfigError) as err:
        parse_config("{not json")
    assert len(err.value.violations) == 1
    assert err.value.violations[0].startswith("$: malformed JSON")


def test_unknown_generator_lists_known_names():
    (violation,) = violations_of(doc_mp(game={"type": "generator", "name": "wat"}))
    assert violation.startswith("$.game.name:")
    assert "matching_pennies" in violation


def test_learner_count_mismatch():
    (violation,) = violations_of(doc_mp(learners=[{"type": "da"}] * 3))
    assert "3 learner configs for 2 players" in violation


def test_seed_bounds_checked():
    violations = violations_of(doc_mp(seed=2**64))
    assert any(v.startswith("$.seed:") for v in violations)
    violations = violations_of(doc_mp(seed=-1))
    assert any(v.startswith("$.seed:") for v in violations)


def test_bad_regularizer_epsilon_is_path_tagged():
    doc = doc_mp(
        learners={"type": "sbr", "regularizer": {"kind": "entropy", "epsilon": -1.0}}
    )
    violations = violations_of(doc)
    assert any(v.startswith("$.learners.0:") for v in violations)


def test_fp_needs_opponents_visible():
    doc = doc_mp(learners={"type": "fp"}, feedback={"visibility": "individual"})
    violations = violations_of(doc)
    assert any("visible" in v for v in violations)


def test_netapps_reject_learner_and_feedback_blocks():
    doc = {
        "game": {"type": "grid", "n_buses": 3},
        "learners": {"type": "da"},
        "feedback": {"visibility": "global"},
        "rounds": 50,
    }
    violations = violations_of(doc)
    assert any(v.startswith("$.learners:") for v in violations)
    assert any(v.startswith("$.feedback:") for v in violations)


def test_routing_learner_must_be_single_sbr():
    routing = demo_document("routing")
    routing["learners"] = [{"type": "sbr"}, {"type": "sbr"}]
    assert any("one learner block" in v for v in violations_of(routing))
    routing["learners"] = {"type": "da"}
    assert any("smoothed best response" in v for v in violations_of(routing))


def test_grid_generator_and_inline_are_exclusive():
    doc = {
        "game": {
            "type": "grid",
            "n_buses": 3,
            "instance": {
                "susceptance": [[1.0]],
                "loads": [0.0],
                "caps": [1.0],
                "unit_costs": [1.0],
                "price": 2.0,
                "weights": [1.0],
                "players": [0],
            },
        },
        "rounds": 10,
    }
    assert any("exactly one" in v for v in violations_of(doc))


def test_unknown_keys_rejected_everywhere():
    violations = violations_of(doc_mp(extra_field=1))
    assert any("extra_field" in v for v in violations)
    violations = violations_of(doc_mp(learners={"type": "da", "speed": 2}))
    assert any("speed" in v for v in violations)


# ---------------------------------------------------------------------------
# run: CSV and summary files


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_csv_and_summary(tmp_path):
    cfg = parse_config(json.dumps(doc_mp(rounds=20)))
    summary = execute_config(cfg, str(tmp_path))
    rows = read_rows(tmp_path / "mp.csv")
    # 2 initial rows + rounds x players
    assert len(rows) == 2 + 20 * 2
    assert rows[0]["round"] == "0" and rows[0]["action"] == ""
    assert set(r["run_id"] for r in rows) == {summary["run_id"]}
    assert summary["run_id"] == summary["config_hash"][:12]
    saved = json.loads((tmp_path / "mp_summary.json").read_text())
    assert saved["csv_schema"] == "trajectory-v1"
    assert saved["final_residual"] >= 0.0
    assert len(saved["time_averaged_strategies"]) == 2
    # the echoed config inside the summary reparses to the same config
    assert parse_config(json.dumps(saved["config"])) == cfg


def test_zero_rounds_gives_header_and_initial_rows_only(tmp_path):
    cfg = parse_config(json.dumps(doc_mp(rounds=0)))
    execute_config(cfg, str(tmp_path))
    rows = read_rows(tmp_path / "mp.csv")
    assert len(rows) == 2
    assert all(r["round"] == "0" for r in rows)
    assert all(r["action"] == "" and r["payoff_raw"] == "" for r in rows)
    assert [r["p0"] for r in rows] == ["0.5", "0.5"]


def test_unequal_action_counts_pad_with_empty_cells(tmp_path):
    doc = {
        "game": {
            "type": "finite",
            "players": 2,
            "actions": [2, 3],
            "payoffs": [[0, 1, 2, 3, 4, 5], [5, 4, 3, 2, 1, 0]],
        },
        "learners": {"type": "sbr"},
        "rounds": 4,
        "output": {"prefix": "pad"},
    }
    cfg = parse_config(json.dumps(doc))
    execute_config(cfg, str(tmp_path))
    rows = read_rows(tmp_path / "pad.csv")
    players = {r["player"] for r in rows}
    assert players == {"0", "1"}
    for r in rows:
        if r["player"] == "0":
            assert r["p2"] == ""  # padded: player 0 has two actions
        else:
            assert r["p2"] != ""


def test_rerun_same_config_same_bytes(tmp_path):
    cfg = parse_config(json.dumps(doc_mp(rounds=200)))
    execute_config(cfg, str(tmp_path / "a"))
    execute_config(cfg, str(tmp_path / "b"))
    a = (tmp_path / "a" / "mp.csv").read_bytes()
    b = (tmp_path / "b" / "mp.csv").read_bytes()
    assert hashlib.sha256(a).hexdigest() == hashlib.sha256(b).hexdigest()
    sa = json.loads((tmp_path / "a" / "mp_summary.json").read_text())
    sb = json.loads((tmp_path / "b" / "mp_summary.json").read_text())
    # every numeric field agrees except the wall-clock measurement
    sa.pop("wall_time_s"), sb.pop("wall_time_s")
    assert sa == sb


def test_grid_run_through_config(tmp_path):
    cfg = parse_config(json.dumps(demo_document("grid")))
    summary = execute_config(cfg, str(tmp_path))
    assert summary["final_residual"] <= 1e-8
    assert summary["foreign_injection_reads"] > 0
    rows = read_rows(tmp_path / "grid_demo.csv")
    assert rows[3]["action"] == "-1"  # continuous runs have no sampled action


def test_dml_run_through_config(tmp_path):
    doc = demo_document("dml")
    doc["rounds"] = 4
    cfg = parse_config(json.dumps(doc))
    summary = execute_config(cfg, str(tmp_path))
    assert summary["final_residual"] is None
    assert len(summary["total_utilities"]) == 4
    assert np.isfinite(summary["total_utilities"]).all()
    rows = read_rows(tmp_path / "dml_demo.csv")
    assert len(rows) == 3 + 4 * 3  # initial rows + iters x nodes
    assert rows[0]["p0"] == "0"  # parameters start at the origin


# ---------------------------------------------------------------------------
# CLI process behavior


def test_cli_run_and_thread_count_independence(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps(doc_mp(rounds=300)))
    digests = []
    for threads, sub in (("1", "t1"), ("4", "t4")):
        res = run_cli(
            ["run", "-c", str(cfg_file), "-o", str(tmp_path / sub)],
            env_extra={
                "OMP_NUM_THREADS": threads,
                "OPENBLAS_NUM_THREADS": threads,
                "MKL_NUM_THREADS": threads,
            },
        )
        assert res.returncode == 0, res.stderr
        digests.append(hashlib.sha256((tmp_path / sub / "mp.csv").read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_cli_log_env_never_changes_outputs(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps(doc_mp(rounds=60)))
    run_cli(["run", "-c", str(cfg_file), "-o", str(tmp_path / "quiet")])
    run_cli(
        ["run", "-c", str(cfg_file), "-o", str(tmp_path / "loud")],
        env_extra={"NASHFLOW_LOG": "DEBUG"},
    )
    assert (tmp_path / "quiet" / "mp.csv").read_bytes() == (
        tmp_path / "loud" / "mp.csv"
    ).read_bytes()


def test_cli_exit_code_1_on_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc_mp(learners={"type": "nosuchlearner"})))
    res = run_cli(["run", "-c", str(bad)])
    assert res.returncode == 1
    assert "$.learners.0.type" in res.stderr
    res = run_cli(["run", "-c", str(tmp_path / "missing.json")])
    assert res.returncode == 1


def test_cli_exit_code_2_on_runtime_error(tmp_path):
    game = tmp_path / "game.json"
    game.write_text(json.dumps({"type": "generator", "name": "matching_pennies"}))
    res = run_cli(
        ["flow", "-c", str(game), "--flow", "replicator", "--t-end", "1", "--dt", "-1"]
    )
    assert res.returncode == 2


def test_cli_exit_code_3_on_divergence(tmp_path):
    rng = np.random.default_rng(0)
    doc = {
        "game": {
            "type": "dml",
            "instance": {
                "features": [(10.0 * rng.normal(size=(30, 3))).tolist() for _ in range(3)],
                "targets": [rng.normal(size=30).tolist() for _ in range(3)],
            },
            "inner_rate": 1.0,
            "inner_iters": 200,
        },
        "rounds": 3,
        "output": {"prefix": "div"},
    }
    cfg_file = tmp_path / "div.json"
    cfg_file.write_text(json.dumps(doc))
    res = run_cli(["run", "-c", str(cfg_file), "-o", str(tmp_path)])
    assert res.returncode == 3
    assert "diverged" in res.stderr


def test_cli_sweep_runs_each_seed(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps(doc_mp(rounds=30)))
    seeds = tmp_path / "seeds.txt"
    seeds.write_text("5\n9\n")
    res = run_cli(["run", "-c", str(cfg_file), "-o", str(tmp_path), "--sweep", str(seeds)])
    assert res.returncode == 0, res.stderr
    rows5 = read_rows(tmp_path / "mp_s5.csv")
    rows9 = read_rows(tmp_path / "mp_s9.csv")
    assert rows5 and rows9
    # distinct seeds produce distinct run ids
    assert rows5[0]["run_id"] != rows9[0]["run_id"]


def test_cli_check_ne_uniform_on_matching_pennies(tmp_path):
    game = tmp_path / "game.json"
    game.write_text(json.dumps({"type": "generator", "name": "matching_pennies"}))
    profile = tmp_path / "profile.json"
    profile.write_text(json.dumps([[0.5, 0.5], [0.5, 0.5]]))
    res = run_cli(["check-ne", "-c", str(game), "--profile", str(profile)])
    assert res.returncode == 0, res.stderr
    out = json.loads(res.stdout)
    assert out["residual"] == 0.0
    assert out["verdict"] == "NE"


def test_cli_enumerate_ne_prisoners_dilemma_strict(tmp_path):
    game = tmp_path / "game.json"
    game.write_text(json.dumps({"type": "generator", "name": "prisoners_dilemma"}))
    res = run_cli(["enumerate-ne", "-c", str(game)])
    assert res.returncode == 0, res.stderr
    out = json.loads(res.stdout)
    assert out["equilibria"] == [{"profile": [1, 1], "strict": True}]


def test_cli_flow_emits_simplex_valued_csv(tmp_path):
    game = tmp_path / "game.json"
    game.write_text(json.dumps({"type": "generator", "name": "prisoners_dilemma"}))
    out_file = tmp_path / "flow.csv"
    res = run_cli(
        [
            "flow", "-c", str(game), "--flow", "replicator",
            "--t-end", "1.0", "--dt", "0.1", "-o", str(out_file),
        ]
    )
    assert res.returncode == 0, res.stderr
    rows = read_rows(out_file)
    times = sorted({float(r["t"]) for r in rows})
    assert times[0] == 0.0 and times[-1] == pytest.approx(1.0)
    for t in times:
        block = [float(r["value"]) for r in rows if float(r["t"]) == t and r["player"] == "0"]
        assert sum(block) == pytest.approx(1.0, abs=1e-9)


def test_cli_apt_on_da_run_trends_to_match(tmp_path):
    doc = {
        "game": {"type": "generator", "name": "prisoners_dilemma"},
        "learners": {"type": "da", "estimator": "exact"},
        "rounds": 4000,
        "seed": 0,
        "output": {"prefix": "pd"},
    }
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps(doc))
    res = run_cli(["run", "-c", str(cfg_file), "-o", str(tmp_path)])
    assert res.returncode == 0, res.stderr
    out_file = tmp_path / "apt.csv"
    res = run_cli(
        [
            "apt", "-c", str(cfg_file), "--csv", str(tmp_path / "pd.csv"),
            "--flow", "da_flow", "--window", "1.0", "-o", str(out_file),
        ]
    )
    assert res.returncode == 0, res.stderr
    assert "flagged: false" in res.stderr
    rows = read_rows(out_file)
    assert len(rows) == 6
    dists = [float(r["distance"]) for r in rows]
    assert dists[-1] <= max(0.5 * dists[0], 1e-3)


def test_cli_demo_routing_masses_move_off_jammed_path(tmp_path):
    res = run_cli(["demo", "routing", "-o", str(tmp_path), "--rounds", "2000"])
    assert res.returncode == 0, res.stderr
    out = json.loads(res.stdout)
    assert out["mass_avoiding_jammers"] >= 0.5  # short run; full bar in acceptance
    summary = json.loads((tmp_path / "routing_demo_summary.json").read_text())
    assert summary["paths"][0] == [0, 1, 3]


def test_cli_usage_error_exits_1():
    res = run_cli(["run"])  # missing -c
    assert res.returncode == 1


def test_fp_time_average_approaches_uniform(tmp_path):
    doc = {
        "game": {"type": "generator", "name": "matching_pennies"},
        "learners": {"type": "fp"},
        "rounds": 20000,
        "seed": 0,
        "output": {"prefix": "fp"},
    }
    cfg = parse_config(json.dumps(doc))
    summary = execute_config(cfg, str(tmp_path))
    for player in summary["time_averaged_strategies"]:
        assert abs(player[0] - 0.5) < 0.05
