"""Command-line front end: config ingestion, run orchestration, result files.

``nashflow run`` executes one experiment described by a JSON config and
writes a trajectory CSV plus a summary JSON.  The remaining subcommands are
thin wrappers over the library: ``check-ne`` and ``enumerate-ne`` for
equilibrium queries, ``flow`` for mean-field integration, ``apt`` for
comparing a recorded run against a flow, and ``demo`` for the bundled
network applications.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 numeric
divergence.  The environment variable NASHFLOW_LOG sets the log level and
never affects numerics.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from pydantic import TypeAdapter, ValidationError

from .config import (
    ConfigError,
    ExperimentConfig,
    GameSpec,
    LearnerSpec,
    parse_config,
)
from .equilibrium import pure_ne_enumerate, svi_residual
from .flows import (
    apt_distance,
    apt_flagged,
    br_flow,
    da_flow,
    integrate,
    replicator_flow,
    sbr_flow,
    sbr_single_flow,
)
from .games import DivergenceError, FiniteGame, GameError, Simplex
from .learners import Trajectory, run_repeated_game
from .netapps import run_dml, run_grid_audited, run_secure_routing
from .netapps.dml import node_utility
from .responses import TieRule

CSV_SCHEMA = "trajectory-v1"
RUN_ID_CHARS = 12

log = logging.getLogger("nashflow")


def _fmt(x: float) -> str:
    """Serialize a float with 17 significant digits (bit-exact round trip)."""
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------


def _csv_header(max_dim: int) -> list[str]:
    return ["run_id", "round", "player", "action", "payoff_raw", "payoff_noisy"] + [
        f"p{j}" for j in range(max_dim)
    ]


def _pad(cells: list[str], max_dim: int) -> list[str]:
    return cells + [""] * (max_dim - len(cells))


def write_trajectory_csv(path: Path, run_id: str, traj: Trajectory) -> None:
    """Rows: one initial row per player (round 0), then rounds x players."""
    max_dim = max(traj.dims)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_csv_header(max_dim))
        for i in range(traj.n_players):
            strat = [_fmt(v) for v in traj.initial[i]]
            writer.writerow([run_id, 0, i, "", "", ""] + _pad(strat, max_dim))
        for k in range(1, traj.rounds + 1):
            for i in range(traj.n_players):
                strat = [_fmt(v) for v in traj.strategies[i][k - 1]]
                writer.writerow(
                    [
                        run_id,
                        k,
                        i,
                        int(traj.actions[k - 1, i]),
                        _fmt(traj.payoffs_raw[k - 1, i]),
                        _fmt(traj.payoffs_noisy[k - 1, i]),
                    ]
                    + _pad(strat, max_dim)
                )


def write_dml_csv(path: Path, run_id: str, inst, traj) -> None:
    """Outer iterations as rounds, nodes as players, parameters as p-columns."""
    n, dim = inst.n_nodes, inst.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_csv_header(dim))
        for i in range(n):
            writer.writerow([run_id, 0, i, "", "", ""] + [_fmt(0.0)] * dim)
        for k, (thetas, links) in enumerate(zip(traj.thetas, traj.links), start=1):
            for i in range(n):
                payoff = node_utility(inst, i, thetas, links[i])
                strat = [_fmt(v) for v in thetas[i]]
                writer.writerow([run_id, k, i, "", _fmt(payoff), ""] + strat)


def _write_summary(path: Path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


def _base_summary(cfg: ExperimentConfig, run_id: str) -> dict:
    return {
        "csv_schema": CSV_SCHEMA,
        "config": cfg.echo(),
        "config_hash": cfg.config_hash(),
        "run_id": run_id,
        "seed": cfg.seed,
        "rounds": cfg.rounds,
    }


def _trajectory_summary(traj: Trajectory) -> dict:
    return {
        "algorithms": list(traj.algorithms),
        "final_strategies": [s.tolist() for s in traj.final],
        "final_residual": float(traj.final_residual),
        "time_averaged_strategies": [s.tolist() for s in traj.time_averaged()],
    }


# ---------------------------------------------------------------------------
# run orchestration
# ---------------------------------------------------------------------------


def execute_config(cfg: ExperimentConfig, outdir: str | None, prefix: str | None = None) -> dict:
    """Run one experiment and write CSV + summary; returns the summary."""
    directory = Path(outdir if outdir is not None else cfg.output.directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = prefix if prefix is not None else cfg.output.prefix
    run_id = cfg.config_hash()[:RUN_ID_CHARS]
    csv_path = directory / f"{stem}.csv"
    summary_path = directory / f"{stem}_summary.json"

    t0 = time.perf_counter()
    summary = _base_summary(cfg, run_id)
    kind = cfg.game.type

    if kind in ("finite", "generator"):
        game = cfg.game.build()
        traj = run_repeated_game(
            game,
            cfg.learner_configs(),
            cfg.rounds,
            cfg.seed,
            feedback=cfg.feedback_setup(game.n_players),
        )
        write_trajectory_csv(csv_path, run_id, traj)
        summary.update(_trajectory_summary(traj))
    elif kind == "routing":
        inst = cfg.game.build()
        learner = cfg.learners[0].build() if cfg.learners else None
        report = run_secure_routing(inst, cfg.rounds, cfg.seed, config=learner)
        write_trajectory_csv(csv_path, run_id, report.trajectory)
        summary.update(_trajectory_summary(report.trajectory))
        summary["paths"] = [list(p) for p in report.paths]
        summary["path_frequencies"] = report.path_frequencies.tolist()
        summary["jammer_frequencies"] = report.jammer_frequencies.tolist()
        summary["mass_avoiding_jammers"] = float(report.mass_avoiding_jammers)
    elif kind == "grid":
        inst, algo = cfg.game.build()
        traj, audit = run_grid_audited(inst, algo, cfg.rounds, cfg.seed)
        write_trajectory_csv(csv_path, run_id, traj)
        summary.update(_trajectory_summary(traj))
        summary["rounds_used"] = traj.rounds
        summary["foreign_injection_reads"] = audit.foreign_injection_reads
    else:  # dml
        inst = cfg.game.build()
        thetas, links, traj = run_dml(
            inst,
            inner_iters=cfg.game.inner_iters,
            outer_iters=cfg.rounds,
            seed=cfg.seed,
            outer_rate=cfg.game.outer_rate,
            inner_rate=cfg.game.inner_rate,
        )
        write_dml_csv(csv_path, run_id, inst, traj)
        summary["algorithms"] = ["MD+GP"] * inst.n_nodes
        summary["final_strategies"] = thetas.tolist()
        summary["final_residual"] = None
        summary["time_averaged_strategies"] = np.mean(traj.thetas, axis=0).tolist()
        summary["final_links"] = links.tolist()
        summary["live_edges"] = [list(e) for e in traj.live_edges()]
        summary["total_utilities"] = [float(u) for u in traj.total_utilities]
        summary["inner_iterations"] = list(traj.inner_iterations)
        summary["utility_monotone"] = bool(traj.utility_monotone)

    summary["wall_time_s"] = time.perf_counter() - t0
    _write_summary(summary_path, summary)
    summary["csv_path"] = str(csv_path)
    summary["summary_path"] = str(summary_path)
    return summary


def _run_one_seed(text: str, seed: int, outdir: str | None) -> tuple[int, int, str]:
    """Sweep worker: rerun the config with one seed; returns (seed, code, msg)."""
    try:
        cfg = parse_config(text)
        cfg = cfg.model_copy(update={"seed": seed})
        summary = execute_config(cfg, outdir, prefix=f"{cfg.output.prefix}_s{seed}")
        return seed, 0, summary["csv_path"]
    except ConfigError as exc:
        return seed, 1, str(exc)
    except DivergenceError as exc:
        return seed, 3, str(exc)
    except GameError as exc:
        return seed, 2, str(exc)


# ---------------------------------------------------------------------------
# game documents for the wrapper subcommands
# ---------------------------------------------------------------------------

_GAME_ADAPTER: TypeAdapter = TypeAdapter(GameSpec)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"$: cannot read {path}: {exc}"]) from exc


def _load_json(path: str):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"$: malformed JSON in {path}: {exc}"]) from exc


def _load_finite_game(path: str) -> FiniteGame:
    """Accept a full experiment config or a bare game block; build the game."""
    doc = _load_json(path)
    block = doc.get("game", doc) if isinstance(doc, dict) else doc
    try:
        spec = _GAME_ADAPTER.validate_python(block)
    except ValidationError as exc:
        raise ConfigError(
            [f"$.game.{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()]
        ) from exc
    if spec.type not in ("finite", "generator"):
        raise ConfigError([f"$.game.type: this command needs a finite game, got {spec.type!r}"])
    return spec.build()


def _load_profile(path: str, game: FiniteGame):
    doc = _load_json(path)
    if not isinstance(doc, list) or len(doc) != game.n_players:
        raise ConfigError(
            [f"$: profile must list one strategy vector per player ({game.n_players})"]
        )
    out = []
    for i, probs in enumerate(doc):
        try:
            out.append(Simplex(np.asarray(probs, dtype=np.float64)))
        except GameError as exc:
            raise ConfigError([f"$.{i}: {exc}"]) from exc
    return tuple(out)


_FLOW_FACTORIES = {
    "da": da_flow,
    "sbr": sbr_flow,
    "sbr_single": sbr_single_flow,
    "br": br_flow,
    "replicator": replicator_flow,
}


def _flow_system(name: str, game: FiniteGame, regularizer=None, tie_rule=None):
    key = name.removesuffix("_flow")
    if key not in _FLOW_FACTORIES:
        raise ConfigError(
            [f"$.flow: unknown flow {name!r} (known: {', '.join(sorted(_FLOW_FACTORIES))})"]
        )
    if key in ("da", "sbr", "sbr_single"):
        return _FLOW_FACTORIES[key](game, regularizer)
    if key == "br":
        return br_flow(game, tie_rule) if tie_rule is not None else br_flow(game)
    return replicator_flow(game)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_run(args) -> int:
    text = _read_text(args.config)
    cfg = parse_config(text)
    if args.sweep is None:
        summary = execute_config(cfg, args.output)
        print(json.dumps({k: summary[k] for k in ("csv_path", "summary_path", "run_id")}))
        return 0
    seeds = []
    for token in _read_text(args.sweep).split():
        try:
            seeds.append(int(token))
        except ValueError:
            raise ConfigError([f"$: sweep file entry {token!r} is not an integer"])
    if not seeds:
        raise ConfigError(["$: sweep file lists no seeds"])
    for s in seeds:
        if not 0 <= s < 2**64:
            raise ConfigError([f"$: sweep seed {s} outside [0, 2^64)"])
    code = 0
    with ProcessPoolExecutor() as pool:
        for seed, status, msg in pool.map(
            _run_one_seed, [text] * len(seeds), seeds, [args.output] * len(seeds)
        ):
            print(f"seed={seed} exit={status} {msg}")
            if status != 0 and code == 0:
                code = status
    return code


def _cmd_check_ne(args) -> int:
    game = _load_finite_game(args.config)
    profile = _load_profile(args.profile, game)
    verdict = svi_residual(game, profile, tol=args.tol)
    out = {
        "residual": float(verdict.residual),
        "tol": float(verdict.tol),
        "verdict": "NE" if verdict.passed else "not NE",
    }
    if verdict.witness is not None:
        out["witness"] = {
            "player": verdict.witness.player,
            "action": verdict.witness.action,
        }
    print(json.dumps(out))
    return 0


def _cmd_enumerate_ne(args) -> int:
    game = _load_finite_game(args.config)
    found = pure_ne_enumerate(game, tol=args.tol)
    out = {
        "equilibria": [
            {"profile": list(joint), "strict": bool(strict)} for joint, strict in found
        ]
    }
    print(json.dumps(out))
    return 0


def _cmd_flow(args) -> int:
    game = _load_finite_game(args.config)
    system = _flow_system(args.flow, game)
    if args.initial is not None:
        doc = _load_json(args.initial)
        if not isinstance(doc, list) or len(doc) != game.n_players:
            raise ConfigError(
                [f"$: initial must list one strategy vector per player ({game.n_players})"]
            )
        y0 = system.state_from_strategies([np.asarray(p, dtype=np.float64) for p in doc])
    else:
        y0 = system.initial_state()
    traj = integrate(system, y0, args.t_end, dt=args.dt, record_every=args.record_every)
    sink = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["t", "player", "component", "value"])
        paths = traj.strategy_path()
        for idx, t in enumerate(traj.times):
            for i, block in enumerate(paths):
                for j, v in enumerate(block[idx]):
                    writer.writerow([_fmt(t), i, j, _fmt(v)])
    finally:
        if args.output:
            sink.close()
    return 0


def _read_run_csv(path: str, dims: tuple[int, ...]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Recover initial and per-round strategies from a trajectory CSV."""
    per_round: dict[int, dict[int, list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:6] != _csv_header(0):
            raise ConfigError([f"$: {path} is not a trajectory CSV (bad header)"])
        for row in reader:
            k, i = int(row["round"]), int(row["player"])
            if i >= len(dims):
                raise ConfigError([f"$: CSV names player {i}, game has {len(dims)}"])
            vec = [float(row[f"p{j}"]) for j in range(dims[i])]
            per_round.setdefault(k, {})[i] = vec
    rounds = max(per_round) if per_round else 0
    n = len(dims)
    try:
        initial = [np.array(per_round[0][i]) for i in range(n)]
        strategies = [
            np.array([per_round[k][i] for k in range(1, rounds + 1)]) for i in range(n)
        ]
    except KeyError as exc:
        raise ConfigError([f"$: CSV is missing rows for round/player {exc}"]) from exc
    return initial, strategies


def _cmd_apt(args) -> int:
    text = _read_text(args.config)
    cfg = parse_config(text)
    if cfg.game.type not in ("finite", "generator"):
        raise ConfigError(["$.game.type: pseudo-trajectory comparison needs a finite game"])
    game = cfg.game.build()
    first = cfg.learners[0]
    if any(spec.mu != first.mu for spec in cfg.learners):
        raise ConfigError(
            ["$.learners: players use different step schedules; the shared mesh needs one"]
        )
    initial, strategies = _read_run_csv(args.csv, game.action_counts)
    rounds = strategies[0].shape[0]
    traj = Trajectory(
        game_kind="finite",
        dims=game.action_counts,
        rounds=rounds,
        seed=cfg.seed,
        algorithms=tuple(spec.type for spec in cfg.learners),
        initial=initial,
        strategies=strategies,
        actions=np.zeros((rounds, game.n_players), dtype=np.int64),
        payoffs_raw=np.zeros((rounds, game.n_players)),
        payoffs_noisy=np.zeros((rounds, game.n_players)),
        residuals=np.zeros(rounds),
        final=[s[-1] if rounds else initial[i] for i, s in enumerate(strategies)],
        final_residual=0.0,
        wall_time=0.0,
    )
    reg = first.regularizer.build() if first.regularizer is not None else None
    tie = TieRule(first.tie_rule)
    system = _flow_system(args.flow, game, regularizer=reg, tie_rule=tie)
    rates = first.mu.build()
    distances = apt_distance(
        traj, rates, system, window_T=args.window, dt=args.dt, n_anchors=args.anchors
    )
    sink = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["t", "distance"])
        for t, d in distances:
            writer.writerow([_fmt(t), _fmt(d)])
    finally:
        if args.output:
            sink.close()
    flagged = apt_flagged(distances, decay=args.decay, match_floor=args.match_floor)
    print(f"flagged: {'true' if flagged else 'false'}", file=sys.stderr)
    return 0


DEMO_ROUNDS = {"routing": 10_000, "grid": 200, "dml": 12}


def demo_document(app: str) -> dict:
    """The experiment document each demo runs (also usable with ``run -c``)."""
    if app == "routing":
        game = {
            "type": "routing",
            "edges": [
                [0, 1, 0.9, 1.0],
                [1, 3, 0.9, 1.0],
                [0, 2, 0.9, 1.5],
                [2, 3, 0.9, 1.5],
                [0, 4, 0.8, 2.0],
                [4, 3, 0.8, 2.0],
            ],
            "source": 0,
            "destination": 3,
            "jammer_sets": [[1]],
            "lam": 1.0,
        }
    elif app == "grid":
        game = {"type": "grid", "algo": "pua", "n_buses": 3, "topology": "chain", "instance_seed": 0}
    elif app == "dml":
        game = {"type": "dml", "n_nodes": 3, "dim": 2, "n_samples": 12, "instance_seed": 0}
    else:
        raise ConfigError([f"$: unknown demo {app!r}"])
    return {
        "game": game,
        "rounds": DEMO_ROUNDS[app],
        "seed": 0,
        "output": {"directory": ".", "prefix": f"{app}_demo"},
    }


def _cmd_demo(args) -> int:
    doc = demo_document(args.app)
    if args.rounds is not None:
        doc["rounds"] = args.rounds
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = parse_config(json.dumps(doc))
    summary = execute_config(cfg, args.output)
    keys = ["csv_path", "summary_path", "run_id", "final_residual"]
    if args.app == "routing":
        keys.append("mass_avoiding_jammers")
    print(json.dumps({k: summary[k] for k in keys if k in summary}))
    return 0


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad usage is a configuration error: exit 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nashflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="execute one experiment config")
    p.add_argument("-c", "--config", required=True, help="experiment JSON file")
    p.add_argument("-o", "--output", default=None, help="output directory override")
    p.add_argument("--sweep", default=None, help="file of seeds; one run per seed")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("check-ne", help="equilibrium residual of a profile")
    p.add_argument("-c", "--config", required=True, help="experiment config or game JSON")
    p.add_argument("--profile", required=True, help="JSON list of per-player strategies")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=_cmd_check_ne)

    p = sub.add_parser("enumerate-ne", help="list pure equilibria")
    p.add_argument("-c", "--config", required=True, help="experiment config or game JSON")
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=_cmd_enumerate_ne)

    p = sub.add_parser("flow", help="integrate a mean-field dynamic")
    p.add_argument("-c", "--config", required=True, help="experiment config or game JSON")
    p.add_argument("--flow", required=True, help="da|sbr|sbr_single|br|replicator")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--initial", default=None, help="JSON list of per-player strategies")
    p.add_argument("-o", "--output", default=None, help="CSV file (default stdout)")
    p.set_defaults(func=_cmd_flow)

    p = sub.add_parser("apt", help="compare a recorded run to a flow")
    p.add_argument("-c", "--config", required=True, help="the run's experiment config")
    p.add_argument("--csv", required=True, help="trajectory CSV from a prior run")
    p.add_argument("--flow", required=True, help="da|sbr|sbr_single|br|replicator")
    p.add_argument("--window", type=float, default=1.0, help="flow window per anchor")
    p.add_argument("--dt", type=float, default=1e-2)
    p.add_argument("--anchors", type=int, default=6)
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--match-floor", type=float, default=1e-3)
    p.add_argument("-o", "--output", default=None, help="CSV file (default stdout)")
    p.set_defaults(func=_cmd_apt)

    p = sub.add_parser("demo", help="run a bundled network application")
    p.add_argument("app", choices=("routing", "grid", "dml"))
    p.add_argument("-o", "--output", default=None, help="output directory override")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_demo)
    return parser


def _setup_logging() -> None:
    name = os.environ.get("NASHFLOW_LOG", "").upper()
    level = getattr(logging, name, None)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.violations:
            print(f"config error: {line}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except GameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
