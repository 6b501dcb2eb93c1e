"""Command-line entry point: ``vne-lab <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import EnvConfig, desk_env, load_json


def _env_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("environment")
    g.add_argument("--config", help="JSON file with 'env' (and optionally 'ppo', 'rewards', 'policy') sections")
    g.add_argument("--desk", action="store_true", help="start from the reduced 30-node learning setting")
    g.add_argument("--topology", help="'waxman' or a path to an edge-list/JSON topology")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-nodes", type=int)
    g.add_argument("--n-vnrs", type=int)
    g.add_argument("--arrival-rate", type=float)
    g.add_argument("--mean-lifetime", type=float)
    g.add_argument("--node-range", type=int, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--demand-range", type=float, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--topology-seed", type=int, help="keep one substrate across seeds")


def _policy_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("policy network")
    g.add_argument("--embed-dim", type=int)
    g.add_argument("--hidden-dim", type=int)
    g.add_argument("--gnn-layers", type=int)
    g.add_argument("--pe-dim", type=int)
    g.add_argument("--head", choices=["pointer", "global"])


def _solver_args(p: argparse.ArgumentParser, many: bool = False) -> None:
    from .experiment import SOLVERS

    g = p.add_argument_group("solver")
    if many:
        g.add_argument("--solvers", nargs="+", choices=SOLVERS, default=["grc", "nrm"])
    else:
        g.add_argument("--solver", choices=SOLVERS, default="grc")
    g.add_argument("--lower", help="lower-level checkpoint")
    g.add_argument("--upper", help="upper-level checkpoint")
    g.add_argument("--beam-width", type=int, default=3)
    mode = g.add_mutually_exclusive_group()
    mode.add_argument("--greedy", dest="decode", action="store_const", const="greedy")
    mode.add_argument("--sample", dest="decode", action="store_const", const="sample")
    g.add_argument("--grc-admission", type=float, help="GRC revenue/cost admission threshold")
    g.add_argument("--w-b", type=float, default=0.0, help="lifetime weight of the revenue pricing")
    g.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    g.add_argument("--out-dir")
    g.add_argument("--timing", action="store_true", help="record wall-clock (logs stop being reproducible)")
    g.add_argument("--check-invariants", action="store_true")
    g.add_argument("--threads", type=int, help="process cap (default: $VNE_LAB_THREADS or 1)")


def build_env(args) -> EnvConfig:
    env = desk_env() if args.desk else EnvConfig()
    if args.config:
        d = load_json(args.config).get("env")
        if d:
            env = env.replace(**d)
    overrides = {
        "topology": args.topology, "n_nodes": args.n_nodes, "n_vnrs": args.n_vnrs,
        "arrival_rate": args.arrival_rate, "mean_lifetime": args.mean_lifetime,
        "node_range": args.node_range, "demand_range": args.demand_range, "topology_seed": args.topology_seed,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return env.replace(**overrides) if overrides else env


def _section(args, name: str) -> dict:
    return load_json(args.config).get(name, {}) if args.config else {}


def build_policy_cfg(args):
    from .agents import PolicyConfig

    d = {"seed": args.seed}
    if args.desk:
        d.update(embed_dim=32, hidden_dim=32, gnn_layers=3, pe_dim=8)
    d.update(_section(args, "policy"))
    for key in ("embed_dim", "hidden_dim", "gnn_layers", "pe_dim", "head"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    return PolicyConfig(**d)


def _spec(args, name: str):
    from .experiment import SolverSpec

    return SolverSpec(name, lower=args.lower, upper=args.upper, beam_width=args.beam_width,
                      decode=args.decode or "greedy", grc_admission=args.grc_admission, seed=args.seed)


def _exp_cfg(args, name: str):
    from .experiment import ExperimentConfig

    return ExperimentConfig(build_env(args), _spec(args, name), (1.0, args.w_b), args.seeds, args.out_dir,
                            args.timing, args.check_invariants)


def cmd_gen(args) -> int:
    from .topology import save_topology, save_vnrs

    env = build_env(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = env.substrate(args.seed)
    save_topology(net, out / f"substrate.{'json' if args.format == 'json' else 'txt'}", args.format)
    save_vnrs(env.workload(args.seed), out / "vnrs.jsonl")
    print(f"wrote {net.num_nodes} nodes / {net.num_links} links and {env.n_vnrs} VNRs to {out}")
    return 0


def cmd_train_lower(args) -> int:
    from .agents import save_policy
    from .rl import PpoConfig, RewardConfig, train_lower

    env = build_env(args)
    ppo = PpoConfig(**_section(args, "ppo"))
    rewards = RewardConfig(**_section(args, "rewards"))
    if args.basic_reward:
        rewards.basic_lower = True
    policy, rows = train_lower(env, args.episodes, build_policy_cfg(args), ppo, rewards, args.seed, args.curve)
    save_policy(policy, args.out, {"episodes": args.episodes, "env": env.to_dict()})
    print(f"trained {args.episodes} episodes; final reward {rows[-1]['reward']:.3f}; saved {args.out}")
    return 0


def cmd_train_upper(args) -> int:
    from .agents import load_policy, save_policy
    from .rl import PpoConfig, RewardConfig, train_upper

    env = build_env(args)
    lower, _ = load_policy(args.lower)
    ppo = PpoConfig(**_section(args, "ppo"))
    rewards = RewardConfig(**_section(args, "rewards"))
    upper, rows = train_upper(lower, env, args.iterations, build_policy_cfg(args), ppo, rewards, args.seed,
                              args.curve)
    save_policy(upper, args.out, {"iterations": args.iterations, "env": env.to_dict()})
    print(f"trained {args.iterations} iterations; final acceptance {rows[-1]['acceptance']:.3f}; saved {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .experiment import AGG_FIELDS, SEED_FIELDS, format_csv, format_table_cell, run_experiment

    cfg = _exp_cfg(args, args.solver)
    rows, agg = run_experiment(cfg, threads=args.threads)
    sys.stdout.write(format_csv(rows, SEED_FIELDS))
    sys.stdout.write(format_csv([agg], AGG_FIELDS))
    print(f"# {agg['solver']}: AC_Ratio {format_table_cell(agg)}  LA_Rev {agg['la_rev_mean']:.2f}")
    return 0


def cmd_sweep(args) -> int:
    from .experiment import AGG_FIELDS, SweepSpec, format_csv, run_sweep

    base = _exp_cfg(args, args.solvers[0])
    sweep = SweepSpec(args.axis, args.values)
    results = run_sweep(base, sweep, [_spec(args, s) for s in args.solvers], threads=args.threads)
    sys.stdout.write(format_csv(results, ["axis", "value"] + AGG_FIELDS))
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_kernels, bench_solvers

    rows = bench_kernels(repeats=args.repeats)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["kernel", "backend", "seconds_per_call"])
    for r in rows:
        w.writerow([r["kernel"], r["backend"], f"{r['seconds_per_call']:.3e}"])
    if args.solvers:
        env = build_env(args)
        w.writerow(["solver", "decisions", "seconds_per_decision", "ac_ratio"])
        for r in bench_solvers([_spec(args, s) for s in args.solvers], env, args.seed):
            w.writerow([r["solver"], r["decisions"], f"{r['seconds_per_decision']:.3e}", f"{r['ac_ratio']:.2f}"])
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vne-lab", description="Online virtual network embedding experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a substrate and a VNR stream")
    _env_args(g)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--format", choices=["edge-list", "json"], default="json")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train-lower", help="train the resource-allocation agent")
    _env_args(t)
    _policy_args(t)
    t.add_argument("--episodes", type=int, default=300)
    t.add_argument("--basic-reward", action="store_true", help="sparse rev/cost reward (ablation)")
    t.add_argument("--out", required=True, help="checkpoint path (writes .bin + .json)")
    t.add_argument("--curve", help="learning-curve CSV")
    t.set_defaults(fn=cmd_train_lower)

    u = sub.add_parser("train-upper", help="train the admission agent on a frozen lower agent")
    _env_args(u)
    _policy_args(u)
    u.add_argument("--lower", required=True)
    u.add_argument("--iterations", type=int, default=50)
    u.add_argument("--out", required=True)
    u.add_argument("--curve")
    u.set_defaults(fn=cmd_train_upper)

    e = sub.add_parser("eval", help="run one solver over seeds and aggregate")
    _env_args(e)
    _solver_args(e)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="aggregate solvers across one scenario axis")
    _env_args(s)
    _solver_args(s, many=True)
    s.add_argument("--axis", required=True, choices=["arrival_rate", "demand_upper", "node_size_upper",
                                                     "pricing_w_b"])
    s.add_argument("--values", type=float, nargs="+", required=True)
    s.set_defaults(fn=cmd_sweep)

    b = sub.add_parser("bench", help="wall-clock of kernels and solvers")
    _env_args(b)
    _solver_args(b, many=True)
    b.add_argument("--repeats", type=int, default=100)
    b.set_defaults(fn=cmd_bench, solvers=[])
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "node_range", None) and args.node_range[0] > args.node_range[1]:
        raise SystemExit("--node-range: LO must not exceed HI")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
