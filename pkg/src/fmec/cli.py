"""Command line entry point: ``fmec gen|train|eval|cat|compare|trace``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .agent import RatAgent
from .baselines import cluster_path, cm_policy, random_policy
from .cat import initial_trajectory, run_cat
from .config import ConfigError, ScenarioConfig, desk_profile, paper_profile
from .env import rollout
from .scenario import Scenario, generate_scenario

log = logging.getLogger("fmec")


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _positive(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def build_config(args) -> ScenarioConfig:
    """Config from ``--config`` or a named profile, then command-line overrides."""
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = ScenarioConfig.load(path)
    else:
        profile = paper_profile if args.paper_scale else desk_profile
        cfg = profile(args.mode, 0 if args.seed is None else args.seed)
    over = {}
    if args.config and args.seed is not None:
        over["seed"] = args.seed
    for name in ("n_ues", "n_uavs", "n_slots"):
        if getattr(args, name, None) is not None:
            over[name] = getattr(args, name)
    if getattr(args, "epochs", None) is not None:
        over["rat"] = {**cfg.rat, "epochs": args.epochs}
    return ScenarioConfig.from_dict({**cfg.to_dict(), **over}) if over else cfg


def get_scenario(args) -> Scenario:
    if getattr(args, "scenario", None):
        return Scenario.load(args.scenario)
    return generate_scenario(build_config(args))


def _add_profile(p):
    p.add_argument("--config", help="JSON config file (schema_version required)")
    p.add_argument("--mode", choices=["2d", "3d"], default="2d")
    p.add_argument("--seed", type=int, help="scenario seed (default 0, or the config's)")
    p.add_argument("--paper-scale", action="store_true",
                   help="full-scale reference setup instead of the desk profile")


def _add_shape(p):
    p.add_argument("--n-ues", type=int)
    p.add_argument("--n-uavs", type=int)
    p.add_argument("--n-slots", type=int)


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    sc = generate_scenario(build_config(args))
    sc.save(args.out)
    log.info("wrote %s (%d UEs, %d UAVs, %d slots, %s)", args.out, sc.n_ues, sc.n_uavs,
             sc.n_slots, sc.mode.value)
    return 0


def cmd_train(args) -> int:
    sc = get_scenario(args)
    ex.train_run(sc, args.out_dir, algorithm=args.algo, epochs=args.epochs,
                 seed=args.train_seed)
    log.info("training output in %s", args.out_dir)
    return 0


def cmd_eval(args) -> int:
    sc = Scenario.load(args.scenario)
    agent = RatAgent.load(args.checkpoint, sc)
    rows = ex.evaluate_points(agent, sc, args.points)
    ex.write_csv(args.out, ex.EVAL_COLUMNS, rows)
    means = np.mean([r[1:] for r in rows], axis=0)
    print(" ".join(f"{c}={m:.1f}" for c, m in zip(ex.EVAL_COLUMNS[1:], means)))
    return 0


def cmd_cat(args) -> int:
    sc = Scenario.load(args.scenario)
    clock = (lambda: 0.0) if args.no_timing else None
    kw = {"clock": clock} if clock else {}
    trace = run_cat(initial_trajectory(sc, args.init), sc, max_iter=args.max_iter,
                    tol=args.tol, **kw)
    trace.write_csv(args.out)
    if args.trajectory_out:
        G = trace.trajectories[-1]
        ex.write_csv(args.trajectory_out, ("uav", "waypoint", "x", "y"),
                     [(j, t, *G[j, t]) for j in range(G.shape[0]) for t in range(G.shape[1])])
    print(f"CAT {args.init}: {trace.objectives[0]:.6g} J -> {trace.final:.6g} J "
          f"in {trace.iterations} iteration(s)")
    return 0


def cmd_compare(args) -> int:
    sc = Scenario.load(args.scenario)
    results = ex.compare(sc, args.seeds, args.algorithms.split(","), epochs=args.epochs,
                         cat_init=args.cat_init)
    detail = ex.write_compare(results, args.out)
    for row in ex.summarize(results):
        print(f"{row[0]:<5} runs={row[1]} mean={row[2]:.1f} J std={row[3]:.1f} J")
    log.info("per-run energies in %s", detail)
    return 0


def cmd_trace(args) -> int:
    sc = Scenario.load(args.scenario)
    n = len(sc.heldout)
    if not 0 <= args.takeoff < n:
        raise ValueError(f"--takeoff must lie in [0, {n - 1}]")
    start = sc.heldout[args.takeoff]
    if args.policy == "rat":
        if not args.checkpoint:
            raise ValueError("--policy rat needs --checkpoint")
        ep = RatAgent.load(args.checkpoint, sc).evaluate(sc, start)
    elif args.policy == "rm":
        ep = rollout(sc, start, random_policy(sc, np.random.default_rng(args.seed)))
    else:
        ep = rollout(sc, start, cm_policy(sc, cluster_path(sc, start, seed=args.seed),
                                          sc.sys.z_init))
    ex.write_slot_logs(ep, args.out_dir)
    print(f"{args.policy}: {ep.total_energy:.1f} J over {len(ep.energy)} slots")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fmec", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a scenario file")
    _add_profile(g)
    _add_shape(g)
    g.add_argument("--epochs", type=_positive, help="override RAT training epochs")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train RAT or uniform-replay DDPG")
    t.add_argument("--scenario", help="scenario (or bare config) file; default: generate")
    _add_profile(t)
    _add_shape(t)
    t.add_argument("--algo", choices=["rat", "ddpg"], default="rat")
    t.add_argument("--epochs", type=_positive)
    t.add_argument("--train-seed", type=int, help="learner seed (default: scenario seed)")
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on held-out taking-off points")
    e.add_argument("--scenario", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--points", type=int, default=5)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cat", help="alternating assignment/trajectory optimisation")
    c.add_argument("--scenario", required=True)
    c.add_argument("--init", default="circle-100", help="circle-<radius> or cluster")
    c.add_argument("--max-iter", type=int, default=10)
    c.add_argument("--tol", type=float, default=1e-3)
    c.add_argument("--out", required=True)
    c.add_argument("--trajectory-out")
    c.add_argument("--no-timing", action="store_true",
                   help="write wall_ms as 0 so reruns are byte-identical")
    c.set_defaults(func=cmd_cat)

    m = sub.add_parser("compare", help="LE/RM/CM/CAT/RAT on one scenario")
    m.add_argument("--scenario", required=True)
    m.add_argument("--seeds", type=_seeds, default=[0, 1, 2, 3, 4])
    m.add_argument("--algorithms", default=",".join(ex.DEFAULT_COMPARE))
    m.add_argument("--epochs", type=_positive)
    m.add_argument("--cat-init", default="circle-100")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_compare)

    r = sub.add_parser("trace", help="per-slot logs of one episode")
    r.add_argument("--scenario", required=True)
    r.add_argument("--policy", choices=["rat", "rm", "cm"], default="rat")
    r.add_argument("--checkpoint")
    r.add_argument("--takeoff", type=int, default=0, help="held-out taking-off point index")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"fmec: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
