"""Seed-averaged trend experiments on one shared world, log and user model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .agent import PolicyAgent
from .config import ExperimentConfig
from .data import LogTable, WorldSpec
from .env import QuitRule
from .penalty import EntropyIndex, PenaltyConfig
from .pipeline import (dominated_from_logs, make_index, make_logs, make_policy,
                       make_user_model, make_world, run_evaluation)
from .user_model import GPMEnsemble

SEEDS = (0, 1, 2, 3, 4)


@dataclass
class Shared:
    cfg: ExperimentConfig
    world: WorldSpec
    logs: LogTable
    ensemble: GPMEnsemble
    index: EntropyIndex
    dominated: set[int]


def prepare(cfg: ExperimentConfig) -> Shared:
    world = make_world(cfg)
    logs = make_logs(cfg, world)
    return Shared(cfg, world, logs, make_user_model(cfg, logs), make_index(cfg, logs),
                  dominated_from_logs(cfg, logs))


def run_point(sh: Shared, lambda1: float, lambda2: float, seeds: Sequence[int] = SEEDS,
              quit_rules: Sequence[QuitRule | None] = (None,)) -> list[dict]:
    """Train one policy per seed; evaluate each under every quit rule.

    Returns one row per quit rule with metrics averaged over seeds (MCD is
    the mean of the per-seed pooled values)."""
    pen = PenaltyConfig(lambda1, lambda2, sh.cfg.penalty.orders)
    per_rule: list[list[dict]] = [[] for _ in quit_rules]
    for s in seeds:
        ac = make_policy(sh.cfg, sh.world, sh.ensemble, sh.index, pen,
                         seed=sh.cfg.stage_seed("policy") + int(s))
        agent = PolicyAgent(ac, sh.ensemble.uncertainty_matrix(), sh.index)
        for j, rule in enumerate(quit_rules):
            per_rule[j].append(run_evaluation(sh.cfg, sh.world, agent, sh.dominated,
                                              rule).mean)
    rows = []
    for rule, results in zip(quit_rules, per_rule):
        rule = rule or sh.world.quit_rule
        row = {"lambda1": lambda1, "lambda2": lambda2, "quit_window": rule.window,
               "quit_tolerance": rule.tolerance, "n_seeds": len(results)}
        for m in ("r_tra", "r_each", "length", "mcd"):
            v = np.array([r[m] for r in results])
            row[m] = float(v.mean())
            row[f"{m}_seed_std"] = float(v.std())
        rows.append(row)
    return rows


def conservatism_trend(sh: Shared, lambda1s=(0.0, 0.1, 1.0), seeds=SEEDS) -> list[dict]:
    """MOPO-style policies (no entropy term) over increasing uncertainty weight."""
    return [run_point(sh, l1, 0.0, seeds)[0] for l1 in lambda1s]


def entropy_trend(sh: Shared, lambda2s=(0.0, 1.0, 5.0), lambda1: float = 0.1,
                  seeds=SEEDS, quit_rule: QuitRule = QuitRule(4, 0)) -> list[dict]:
    return [run_point(sh, lambda1, l2, seeds, (quit_rule,))[0] for l2 in lambda2s]


def dorl_vs_mopo(sh: Shared, seeds=SEEDS, quit_rule: QuitRule = QuitRule(20, 10)
                 ) -> dict[str, dict]:
    p = sh.cfg.penalty
    return {"dorl": run_point(sh, p.lambda1, p.lambda2, seeds, (quit_rule,))[0],
            "mopo": run_point(sh, p.lambda1, 0.0, seeds, (quit_rule,))[0]}
