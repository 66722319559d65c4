"""Pipeline stages and the on-disk artifact store shared by the CLI and scripts."""
from __future__ import annotations

import dataclasses
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .agent import (ActorCritic, EpsilonGreedyAgent, PolicyAgent, UCBAgent, UCBState,
                    init_actor_critic, load_policy, save_policy, train_policy)
from .config import ExperimentConfig
from .data import (LogTable, WorldSpec, dominated_categories, generate_logs, generate_world,
                   load_logs, load_world, save_world, write_logs)
from .env import QuitRule
from .evaluation import EvalResult, evaluate, expand_grid, marginalize, write_results_csv
from .penalty import EntropyIndex, PenaltyConfig, build_entropy_index, load_index, save_index
from .user_model import GPMEnsemble, load_ensemble, save_ensemble, train_ensemble

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1
BASELINES = ("dorl", "mopo", "mbpo", "ips", "egreedy", "ucb")
TRAINED_BASELINES = ("dorl", "mopo", "mbpo", "ips")


class MissingArtifact(FileNotFoundError):
    """An upstream artifact is absent; the message names the command to run."""


class ConfigHashMismatch(UserWarning):
    pass


# --------------------------------------------------------------------------- baselines


def penalty_for(baseline: str, cfg: ExperimentConfig) -> PenaltyConfig:
    """DORL uses both weights, MOPO only the uncertainty weight, MBPO and
    IPS neither."""
    p = cfg.penalty
    if baseline == "dorl":
        return PenaltyConfig(p.lambda1, p.lambda2, p.orders)
    if baseline == "mopo":
        return PenaltyConfig(p.lambda1, 0.0, p.orders)
    if baseline in ("mbpo", "ips"):
        return PenaltyConfig(0.0, 0.0, p.orders)
    raise ValueError(f"baseline {baseline!r} has no modified reward")


# --------------------------------------------------------------------------- stages


def make_world(cfg: ExperimentConfig) -> WorldSpec:
    w = cfg.world
    return generate_world(w.n_users, w.n_items, w.n_categories, w.latent_dim, w.noise_scale,
                          seed=cfg.stage_seed("world"), quit_rule=w.quit_rule,
                          max_rounds=w.max_rounds)


def make_logs(cfg: ExperimentConfig, world: WorldSpec) -> LogTable:
    return generate_logs(world, cfg.behavior.policy, cfg.behavior.events_per_user,
                         seed=cfg.stage_seed("logs"))


def make_user_model(cfg: ExperimentConfig, logs: LogTable, ips: bool = False) -> GPMEnsemble:
    return train_ensemble(logs, cfg.user_model.train_config(cfg.stage_seed("user_model"), ips))


def make_index(cfg: ExperimentConfig, logs: LogTable) -> EntropyIndex:
    return build_entropy_index(logs, cfg.penalty.orders)


def make_policy(cfg: ExperimentConfig, world: WorldSpec, ensemble: GPMEnsemble,
                index: EntropyIndex, penalty: PenaltyConfig, seed: int | None = None
                ) -> ActorCritic:
    seed = cfg.stage_seed("policy") if seed is None else seed
    ac = init_actor_critic(world.n_items, cfg.agent.hyper(seed), cfg.agent.tracker,
                           item_category=world.item_category)
    return train_policy(ensemble, index, penalty, (world.n_users, world.n_items), ac)


def make_agent(baseline: str, cfg: ExperimentConfig, *, policy: ActorCritic | None = None,
               ensemble: GPMEnsemble | None = None, index: EntropyIndex | None = None,
               logs: LogTable | None = None):
    if baseline in TRAINED_BASELINES:
        return PolicyAgent(policy, ensemble.uncertainty_matrix(), index)
    if baseline == "egreedy":
        return EpsilonGreedyAgent(ensemble.reward_matrix(), cfg.agent.epsilon)
    if baseline == "ucb":
        return UCBAgent(UCBState.from_logs(logs))
    raise ValueError(f"unknown baseline {baseline!r}")


def run_evaluation(cfg: ExperimentConfig, world: WorldSpec, agent, dominated: set[int],
                   quit_rule: QuitRule | None = None) -> EvalResult:
    if quit_rule is not None:
        world = world.with_quit_rule(quit_rule)
    return evaluate(world, agent, cfg.eval.n_episodes, seed=cfg.stage_seed("eval"),
                    dominated=dominated)


# --------------------------------------------------------------------------- artifact store


@dataclass
class RunStore:
    """Versioned artifacts in ``cfg.out_dir``, each stamped with the config
    hash and seed. Loading an artifact written under another hash warns."""

    cfg: ExperimentConfig

    @property
    def root(self) -> Path:
        return Path(self.cfg.out_dir)

    def path(self, name: str) -> Path:
        return self.root / name

    @property
    def stamp(self) -> dict:
        return {"artifact_version": ARTIFACT_VERSION, "config_hash": self.cfg.config_hash(),
                "seed": self.cfg.seed}

    def _check(self, path: Path, producer: str) -> dict:
        if not path.is_file():
            raise MissingArtifact(f"{path} not found; run {producer} first")
        meta = json.loads(path.read_text(encoding="utf-8")) if path.suffix == ".json" else {}
        h = meta.get("config_hash")
        if h is not None and h != self.cfg.config_hash():
            warnings.warn(f"{path.name} was written under config hash {h}, current config is "
                          f"{self.cfg.config_hash()}", ConfigHashMismatch, stacklevel=3)
        return meta

    def write_json(self, name: str, payload: dict) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(name)
        p.write_text(json.dumps({**payload, **self.stamp}, indent=1, sort_keys=True) + "\n",
                     encoding="utf-8")
        return p

    # world
    def save_world(self, world: WorldSpec) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        save_world(world, self.path("world.json"), **self.stamp)
        return self.path("world.json")

    def load_world(self) -> WorldSpec:
        self._check(self.path("world.json"), "gen-world")
        return load_world(self.path("world.json"))

    # logs: CSV plus a JSON sidecar carrying the stamp
    def save_logs(self, logs: LogTable) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        write_logs(logs, self.path("logs.csv"))
        self.write_json("logs.meta.json", {"n_records": len(logs)})
        return self.path("logs.csv")

    def load_logs(self) -> LogTable:
        self._check(self.path("logs.csv"), "gen-logs")
        if self.path("logs.meta.json").is_file():
            self._check(self.path("logs.meta.json"), "gen-logs")
        world = self.load_world()
        logs = load_logs(self.path("logs.csv"))
        # ids are inferred from the file; restore the world's universe sizes
        return LogTable.from_columns(logs.user_id, logs.item_id, logs.timestamp, logs.reward,
                                     logs.category_id, world.n_users, world.n_items,
                                     world.n_categories)

    # user models
    def _model_name(self, ips: bool) -> str:
        return "user_model_ips.json" if ips else "user_model.json"

    def save_user_model(self, ens: GPMEnsemble, ips: bool = False) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        save_ensemble(ens, self.path(self._model_name(ips)), **self.stamp)
        return self.path(self._model_name(ips))

    def load_user_model(self, ips: bool = False) -> GPMEnsemble:
        cmd = "train-user-model --baseline ips" if ips else "train-user-model"
        self._check(self.path(self._model_name(ips)), cmd)
        return load_ensemble(self.path(self._model_name(ips)))

    # entropy index
    def save_index(self, index: EntropyIndex) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        save_index(index, self.path("entropy_index.json"), **self.stamp)
        return self.path("entropy_index.json")

    def load_index(self) -> EntropyIndex:
        self._check(self.path("entropy_index.json"), "build-entropy-index")
        return load_index(self.path("entropy_index.json"))

    # policies
    def save_policy(self, ac: ActorCritic, baseline: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(f"policy_{baseline}.json")
        save_policy(ac, p, baseline=baseline, **self.stamp)
        return p

    def load_policy(self, baseline: str) -> ActorCritic:
        p = self.path(f"policy_{baseline}.json")
        self._check(p, f"train-policy --baseline {baseline}" if baseline != "dorl"
                    else "train-policy")
        return load_policy(p)


def dominated_from_logs(cfg: ExperimentConfig, logs: LogTable) -> set[int]:
    return dominated_categories(logs, cfg.eval.coverage)


def build_agent_from_store(store: RunStore, baseline: str):
    cfg = store.cfg
    if baseline in TRAINED_BASELINES:
        policy = store.load_policy(baseline)
        ens = store.load_user_model(ips=baseline == "ips")
        index = store.load_index() if baseline == "dorl" else None
        return make_agent(baseline, cfg, policy=policy, ensemble=ens, index=index)
    if baseline == "egreedy":
        return make_agent(baseline, cfg, ensemble=store.load_user_model())
    if baseline == "ucb":
        return make_agent(baseline, cfg, logs=store.load_logs())
    raise ValueError(f"unknown baseline {baseline!r}")


# --------------------------------------------------------------------------- sweeps


def _sweep_point(args) -> dict:
    cfg, baseline, point, world, ens, index, dominated = args
    section = dataclasses.replace(
        cfg.penalty, lambda1=float(point.get("lambda1", cfg.penalty.lambda1)),
        lambda2=float(point.get("lambda2", cfg.penalty.lambda2)))
    pen = penalty_for(baseline, cfg.replace(penalty=section))
    ac = make_policy(cfg, world, ens, index, pen)
    agent = PolicyAgent(ac, ens.uncertainty_matrix(), index)
    rows = []
    for n in point.get("_windows", [None]):
        rule = None if n is None else QuitRule(int(n), cfg.world.quit_tolerance)
        res = run_evaluation(cfg, world, agent, dominated, rule)
        shown = {k: v for k, v in point.items() if k != "_windows"}
        if n is not None:
            shown["quit_window"] = int(n)
        rows.append({**{f"param_{k}": v for k, v in shown.items()}, **res.row()})
    return {"rows": rows}


def run_sweep(cfg: ExperimentConfig, world: WorldSpec, logs: LogTable, ens: GPMEnsemble,
              index: EntropyIndex, baseline: str = "dorl", threads: int = 1) -> list[dict]:
    """One trained policy per (lambda1, lambda2) grid point; quit-window
    values reuse the policy since training never sees the quit rule."""
    if baseline not in TRAINED_BASELINES:
        raise ValueError(f"sweep needs a trained baseline, got {baseline!r}")
    grid = dict(cfg.eval.sweep) or {"lambda1": [cfg.penalty.lambda1]}
    windows = grid.pop("quit_window", None)
    points = expand_grid(grid) if grid else [{}]
    if windows is not None:
        for p in points:
            p["_windows"] = windows
    dominated = dominated_from_logs(cfg, logs)
    jobs = [(cfg, baseline, p, world, ens, index, dominated) for p in points]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(_sweep_point, jobs))
    else:
        outs = [_sweep_point(j) for j in jobs]
    return [r for o in outs for r in o["rows"]]


def write_sweep(store: RunStore, rows: list[dict], baseline: str) -> list[Path]:
    store.root.mkdir(parents=True, exist_ok=True)
    paths = [store.path(f"sweep_{baseline}.csv")]
    write_results_csv(rows, paths[0])
    over = store.cfg.eval.marginalize
    if over is not None:
        paths.append(store.path(f"sweep_{baseline}_marginal_{over}.csv"))
        write_results_csv(marginalize(rows, over), paths[1])
    store.write_json(f"sweep_{baseline}.meta.json",
                     {"files": [p.name for p in paths], "n_rows": len(rows)})
    return paths


# --------------------------------------------------------------------------- end to end


def run_pipeline(cfg: ExperimentConfig, baseline: str = "dorl", threads: int = 1) -> Path:
    """gen-world through sweep in one process; returns the sweep CSV path."""
    store = RunStore(cfg)
    world = make_world(cfg)
    store.save_world(world)
    logs = make_logs(cfg, world)
    store.save_logs(logs)
    ens = make_user_model(cfg, logs, ips=baseline == "ips")
    store.save_user_model(ens, ips=baseline == "ips")
    index = make_index(cfg, logs)
    store.save_index(index)
    rows = run_sweep(cfg, world, logs, ens, index, baseline, threads)
    return write_sweep(store, rows, baseline)[0]

