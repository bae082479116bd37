"""Command-line interface.

Subcommands::

    gen-data   simulate a dataset under the expert/random mixture policy
    train      learn controllers from a dataset (single EM run or restarts)
    evaluate   importance-weighted value of a policy on logged episodes
    rollout    simulate a learned policy and report its returns
    bench      sweep presets comparing the two trainers, CSV + figure

Every artifact-producing command writes exactly one ``manifest.json`` into
its output directory recording the resolved configuration, master seed,
input digests, and tool version; re-running the command from the manifest
reproduces every artifact byte-for-byte. Exit codes: 0 success, 2 usage,
3 data or validation error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

from . import __version__
from . import rng as rng_mod
from .behavior import BehaviorConfig, generate_dataset
from .bench import BenchConfig, run_sweep, write_bench_csv
from .dataset import (
    LearnConfig,
    empirical_value,
    read_episodes,
    split_dataset,
    write_episodes,
)
from .errors import DataFormatError, InsufficientDataError, NumericError, TrainingError
from .fsc import AgentSpec, init_joint, read_policy, write_policy
from .isem import IsemConfig, isem_train
from .poem import poem_train
from .sim.engine import rollout_evaluate
from .sim.scenario import load_scenario, scenario_digest

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 2, 3, 4


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: str, command: str, args: argparse.Namespace,
                    inputs: dict[str, str], outputs: list[str], t0: float) -> None:
    manifest = {
        "command": command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "master_seed": getattr(args, "seed", None),
        "inputs": inputs,
        "outputs": {name: _sha256(os.path.join(out_dir, name)) for name in outputs},
        "tool_version": __version__,
        "duration_seconds": round(time.time() - t0, 3),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_data_inputs(args, names):
    inputs = {}
    for name in names:
        path = getattr(args, name.replace("-", "_"), None)
        if path and os.path.exists(path):
            inputs[path] = _sha256(path)
    return inputs


def _scenario_from_arg(source: str):
    scenario = load_scenario(source)
    return scenario, scenario_digest(scenario)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    t0 = time.time()
    scenario, digest = _scenario_from_arg(args.scenario)
    rho = args.rho / 100.0
    episodes = generate_dataset(
        BehaviorConfig(rho=rho, episodes=args.episodes, master_seed=args.seed, scenario=scenario)
    )
    out = _ensure_out(args.out)
    write_episodes(episodes, os.path.join(out, "episodes.jsonl"))
    inputs = _load_data_inputs(args, ["scenario"])
    inputs[f"scenario:{args.scenario}"] = digest
    _write_manifest(out, "gen-data", args, inputs, ["episodes.jsonl"], t0)
    print(f"wrote {len(episodes)} episodes to {out}/episodes.jsonl")
    return 0


def _infer_specs(episodes) -> dict[int, AgentSpec]:
    """Alphabet sizes from the data alone: largest index + 1 per agent.

    A fallback for foreign datasets; pass --scenario to pin the exact
    simulator alphabets (required if the policy will be rolled out).
    """
    specs = {}
    for tr in episodes[0].agents:
        n_actions, n_obs = 1, 1
        for ep in episodes:
            track = next(t for t in ep.agents if t.agent_id == tr.agent_id)
            for d in track.decisions:
                n_actions = max(n_actions, d.action + 1)
                if d.obs is not None:
                    n_obs = max(n_obs, d.obs + 1)
        specs[tr.agent_id] = AgentSpec(tr.agent_id, n_actions, n_obs, 1)
    return specs


def cmd_train(args) -> int:
    from .plots import plot_isem_trace, plot_train_trace

    t0 = time.time()
    train = read_episodes(args.train)
    if args.eval:
        evals = read_episodes(args.eval)
    elif args.algo == "isem":
        train, evals = split_dataset(
            train, args.eval_fraction, rng_mod.stream(args.seed, rng_mod.NS_SPLIT)
        )
    else:
        evals = []
    if args.scenario:
        scenario, _ = _scenario_from_arg(args.scenario)
        specs = scenario.agent_specs(args.nodes)
    else:
        specs = {n: s.with_nodes(args.nodes) for n, s in _infer_specs(train).items()}
    learn = LearnConfig(gamma=args.gamma)
    out = _ensure_out(args.out)
    outputs = ["policy.jsonl", "train_stats.csv"]
    if args.algo == "isem":
        cfg = IsemConfig(
            threads=args.threads, max_outer=args.max_outer, epsilon=args.epsilon,
            master_seed=args.seed, poem_tol=args.tol, poem_max_inner=args.max_inner,
        )
        theta, state = isem_train(train, evals, specs, cfg, learn)
        state.write_csv(os.path.join(out, "isem_trace.csv"))
        plot_isem_trace(state, os.path.join(out, "isem_trace.png"))
        stats = state.best.stats
        outputs += ["isem_trace.csv"]
        print(
            f"isem: {state.outer_iterations} outer iterations, "
            f"best eval value {state.best.value!r} (thread {state.best.thread})"
        )
    else:
        gen = rng_mod.stream(args.seed, rng_mod.NS_RESTART, 1, 1)
        theta, stats = poem_train(
            init_joint(specs.values(), gen), train, learn,
            tol=args.tol, max_inner=args.max_inner,
        )
        print(
            f"poem: {stats.iterations_run} iterations, converged={stats.converged}, "
            f"final bound {stats.lower_bound_trace[-1]!r}"
            if stats.lower_bound_trace
            else "poem: 0 iterations"
        )
    write_policy(theta, os.path.join(out, "policy.jsonl"))
    stats.write_csv(os.path.join(out, "train_stats.csv"))
    plot_train_trace(stats, os.path.join(out, "train_trace.png"))
    inputs = _load_data_inputs(args, ["train", "eval", "scenario"])
    _write_manifest(out, "train", args, inputs, outputs, t0)
    return 0


def cmd_evaluate(args) -> int:
    t0 = time.time()
    episodes = read_episodes(args.data)
    policy = None if args.policy == "behavior" else read_policy(args.policy)
    learn = LearnConfig(gamma=args.gamma)
    value = empirical_value(episodes, policy, learn)
    print(f"{value!r}")
    if args.out:
        out = _ensure_out(args.out)
        record = {
            "value": value,
            "episodes": len(episodes),
            "gamma": args.gamma,
            "policy": args.policy,
            "data": args.data,
        }
        with open(os.path.join(out, "evaluation.json"), "w", encoding="utf-8") as fh:
            json.dump(record, fh, indent=2)
            fh.write("\n")
        inputs = _load_data_inputs(args, ["data", "policy"])
        _write_manifest(out, "evaluate", args, inputs, ["evaluation.json"], t0)
    return 0


def cmd_rollout(args) -> int:
    t0 = time.time()
    scenario, _ = _scenario_from_arg(args.scenario)
    policy = read_policy(args.policy)
    learn = LearnConfig(gamma=args.gamma)
    result = rollout_evaluate(policy, scenario, args.episodes, learn, args.seed)
    print(
        f"mean discounted return {result.mean_discounted!r}, "
        f"mean undiscounted return {result.mean_undiscounted!r} over {args.episodes} episodes"
    )
    if args.out:
        out = _ensure_out(args.out)
        with open(os.path.join(out, "rollout.csv"), "w", encoding="utf-8") as fh:
            fh.write("episode,discounted,undiscounted\n")
            for i, (d, u) in enumerate(zip(result.discounted, result.undiscounted)):
                fh.write(f"{i},{d!r},{u!r}\n")
        inputs = _load_data_inputs(args, ["policy", "scenario"])
        _write_manifest(out, "rollout", args, inputs, ["rollout.csv"], t0)
    return 0


def cmd_bench(args) -> int:
    from .plots import plot_bench

    t0 = time.time()
    cfg = BenchConfig(
        sweep=args.sweep, mini=not args.full, seeds=args.seeds,
        rho=args.rho / 100.0, master_seed=args.seed,
        poem_max_inner=args.max_inner,
    )
    rows = run_sweep(cfg)
    out = _ensure_out(args.out)
    csv_name = f"bench_{args.sweep}.csv"
    write_bench_csv(rows, os.path.join(out, csv_name))
    plot_bench(rows, args.sweep, os.path.join(out, f"bench_{args.sweep}.png"))
    _write_manifest(out, "bench", args, {}, [csv_name], t0)
    for r in rows:
        if r["kind"] == "aggregate":
            print(
                f"{r['algo']:>5} {args.sweep}={r['sweep_value']:<4} "
                f"mean {r['value_mean']:.4f} stddev {r['value_stddev']:.4f} "
                f"({r['seed_count']} seeds)"
            )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sarem",
        description="Learn decentralized macro-action controllers from batch trajectories.",
    )
    parser.add_argument("--version", action="version", version=f"sarem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a behavior-policy dataset")
    p.add_argument("--scenario", default="default", help="builtin name (default, mini) or JSON file")
    p.add_argument("--rho", type=float, default=85.0, help="expert percentage in [0, 100)")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="learn controllers from logged episodes")
    p.add_argument("--algo", choices=("poem", "isem"), default="isem")
    p.add_argument("--train", required=True, help="training episodes (jsonl)")
    p.add_argument("--eval", help="evaluation episodes; isem splits --train when omitted")
    p.add_argument("--eval-fraction", type=float, default=0.3)
    p.add_argument("--scenario", help="pin controller alphabets to a scenario")
    p.add_argument("--nodes", type=int, default=3, help="controller nodes per agent")
    p.add_argument("--threads", type=int, default=8, help="restart threads (isem)")
    p.add_argument("--epsilon", type=float, default=0.1, help="retention threshold (isem)")
    p.add_argument("--max-outer", type=int, default=20, help="outer iteration budget (isem)")
    p.add_argument("--gamma", type=float, default=0.999)
    p.add_argument("--tol", type=float, default=1e-3, help="EM relative improvement tolerance")
    p.add_argument("--max-inner", type=int, default=200, help="EM iteration budget")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="importance-weighted value on logged episodes")
    p.add_argument("--policy", required=True, help="policy file, or 'behavior' for the logging policy")
    p.add_argument("--data", required=True)
    p.add_argument("--gamma", type=float, default=0.999)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rollout", help="simulate a policy and report returns")
    p.add_argument("--policy", required=True)
    p.add_argument("--scenario", default="default")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--gamma", type=float, default=0.999)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("bench", help="sweep presets comparing both trainers")
    p.add_argument("--sweep", choices=("k", "m", "q"), required=True)
    p.add_argument("--full", action="store_true", help="full scenario instead of the mini preset")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--rho", type=float, default=85.0)
    p.add_argument("--max-inner", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    try:
        return args.func(args)
    except (NumericError, TrainingError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except (DataFormatError, InsufficientDataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
