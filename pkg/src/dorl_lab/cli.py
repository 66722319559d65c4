"""Command-line entry point: ``dorl-lab <subcommand> --config PATH``.

Subcommands form a DAG: gen-world -> gen-logs -> {train-user-model,
build-entropy-index} -> train-policy -> {evaluate, sweep}. ``analyze-logs``
and ``verify-lemma`` stand alone.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import ConfigError, load_config
from .evaluation import day1_retention, repeat_rates, write_results_csv
from .theory import random_mdp, random_policy, perturb_mdp, verify_lemma1

log = logging.getLogger("dorl_lab")
LEMMA_TOL = 1e-6


def _store(args) -> pl.RunStore:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg = cfg.replace(out_dir=args.out)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return pl.RunStore(cfg)


def cmd_gen_world(args) -> int:
    store = _store(args)
    p = store.save_world(pl.make_world(store.cfg))
    log.info("wrote %s", p)
    return 0


def cmd_gen_logs(args) -> int:
    store = _store(args)
    world = store.load_world()
    p = store.save_logs(pl.make_logs(store.cfg, world))
    log.info("wrote %s", p)
    return 0


def cmd_train_user_model(args) -> int:
    store = _store(args)
    ips = args.baseline == "ips"
    ens = pl.make_user_model(store.cfg, store.load_logs(), ips=ips)
    p = store.save_user_model(ens, ips=ips)
    log.info("wrote %s (final losses %s)", p, np.round(ens.final_losses, 4).tolist())
    return 0


def cmd_build_entropy_index(args) -> int:
    store = _store(args)
    p = store.save_index(pl.make_index(store.cfg, store.load_logs()))
    log.info("wrote %s", p)
    return 0


def cmd_train_policy(args) -> int:
    store = _store(args)
    b = args.baseline
    if b not in pl.TRAINED_BASELINES:
        log.info("baseline %s is a bandit with nothing to train; run evaluate directly", b)
        return 0
    world = store.load_world()
    ens = store.load_user_model(ips=b == "ips")
    index = store.load_index()
    ac = pl.make_policy(store.cfg, world, ens, index, pl.penalty_for(b, store.cfg))
    p = store.save_policy(ac, b)
    log.info("wrote %s (final simulated return %.3f)", p, ac.history[-1]["sim_return"]
             if ac.history else float("nan"))
    return 0


def cmd_evaluate(args) -> int:
    store = _store(args)
    cfg, b = store.cfg, args.baseline
    agent = pl.build_agent_from_store(store, b)
    world = store.load_world()
    dominated = pl.dominated_from_logs(cfg, store.load_logs())
    res = pl.run_evaluation(cfg, world, agent, dominated)
    pen = pl.penalty_for(b, cfg) if b in pl.TRAINED_BASELINES else None
    row = {"param_baseline": b,
           "param_lambda1": pen.lambda1 if pen else 0.0,
           "param_lambda2": pen.lambda2 if pen else 0.0,
           **res.row()}
    write_results_csv([row], store.path(f"results_{b}.csv"))
    store.write_json(f"results_{b}.meta.json", {"mean": res.mean, "std": res.std,
                                                "dominated": sorted(dominated)})
    print(json.dumps({"baseline": b, **res.row()}, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    store = _store(args)
    cfg = store.cfg
    ips = args.baseline == "ips"
    rows = pl.run_sweep(cfg, store.load_world(), store.load_logs(),
                        store.load_user_model(ips=ips), store.load_index(),
                        args.baseline, threads=args.threads)
    for p in pl.write_sweep(store, rows, args.baseline):
        log.info("wrote %s", p)
    return 0


def cmd_analyze_logs(args) -> int:
    store = _store(args)
    logs = store.load_logs()
    rates = repeat_rates(logs)
    item_level = np.array([v[0] for v in rates.values()])
    cat_level = np.array([v[1] for v in rates.values()])
    try:
        retention = day1_retention(logs)
    except ValueError as e:
        retention = {"unavailable": str(e)}
    dominated = sorted(pl.dominated_from_logs(store.cfg, logs))
    counts = logs.category_counts()
    summary = {
        "n_records": len(logs),
        "user_days": len(rates),
        "item_repeat_rate_mean": float(item_level.mean()),
        "category_repeat_rate_mean": float(cat_level.mean()),
        "day1_retention": retention,
        "dominated_categories": dominated,
        "category_share": (counts / counts.sum()).round(6).tolist(),
    }
    store.write_json("log_analysis.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_verify_lemma(args) -> int:
    """Instance i draws from seed + i, so any failing row can be replayed alone."""
    store = _store(args)
    rows = []
    t0 = time.perf_counter()
    print(f"{'seed':>8} {'S':>2} {'A':>2} {'gamma':>5} {'lhs':>14} {'rhs':>14} {'diff':>10}")
    for i in range(args.instances):
        inst_seed = store.cfg.seed + i
        rng = np.random.default_rng(inst_seed)
        S, A = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        gamma = float(rng.choice([0.5, 0.9, 0.99]))
        M = random_mdp(S, A, gamma, rng)
        chk = verify_lemma1(M, perturb_mdp(M, rng), random_policy(S, A, rng))
        rows.append({"seed": inst_seed, "lhs": chk.lhs, "rhs": chk.rhs, "diff": chk.abs_diff})
        print(f"{inst_seed:>8} {S:>2} {A:>2} {gamma:>5} {chk.lhs:>14.10f} {chk.rhs:>14.10f} "
              f"{chk.abs_diff:>10.2e}")
    worst = max((r["diff"] for r in rows), default=0.0)
    ok = worst <= LEMMA_TOL
    store.write_json("lemma_check.json", {"instances": rows, "max_abs_diff": worst,
                                          "tolerance": LEMMA_TOL, "passed": ok})
    print(f"verify-lemma: {args.instances} instances, max |diff| = {worst:.3e} "
          f"({'ok' if ok else 'FAILED'}, {time.perf_counter() - t0:.2f}s)")
    return 0 if ok else 1


COMMANDS = {
    "gen-world": cmd_gen_world,
    "gen-logs": cmd_gen_logs,
    "train-user-model": cmd_train_user_model,
    "build-entropy-index": cmd_build_entropy_index,
    "train-policy": cmd_train_policy,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "analyze-logs": cmd_analyze_logs,
    "verify-lemma": cmd_verify_lemma,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dorl-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON config")
        p.add_argument("--out", default=None, help="artifact directory (overrides out_dir)")
        p.add_argument("--seed", type=int, default=None, help="global seed (overrides config)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for sweep grid points")
        if name in ("train-user-model", "train-policy", "evaluate", "sweep"):
            p.add_argument("--baseline", choices=pl.BASELINES, default="dorl")
        if name == "verify-lemma":
            p.add_argument("--instances", type=int, default=100)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, pl.MissingArtifact) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
