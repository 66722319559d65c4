"""Interactive evaluation against the ground-truth world and Matthew-effect metrics."""
from __future__ import annotations

import csv
import itertools
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .data import LogTable, WorldSpec
from .env import reset, step

SECONDS_PER_DAY = 86400
METRICS = ("r_tra", "r_each", "length", "mcd")


class Agent(Protocol):
    def reset(self, user_id: int) -> None: ...
    def act(self, mask: np.ndarray, rng: np.random.Generator) -> int: ...
    def observe(self, item: int, reward: float) -> None: ...


@dataclass(frozen=True)
class Trajectory:
    user_id: int
    items: tuple[int, ...]
    rewards: tuple[float, ...]
    categories: tuple[int, ...]
    termination_reason: str

    @property
    def length(self) -> int:
        return len(self.items)

    @property
    def r_tra(self) -> float:
        return float(sum(self.rewards))


@dataclass(frozen=True)
class TrajectoryMetrics:
    r_tra: float
    r_each: float
    length: int
    mcd: float


def run_episode(world: WorldSpec, agent: Agent, user: int, seed: int = 0) -> Trajectory:
    rng = np.random.default_rng(seed)
    state = reset(world, user)
    agent.reset(user)
    mask = np.ones(world.n_items, dtype=bool)
    done = False
    while not done:
        if not mask.any():
            break
        item = agent.act(mask, rng)
        state, reward, done, _ = step(world, state, item)
        mask[item] = False
        agent.observe(item, reward)
    items, rewards, cats = zip(*state.history) if state.history else ((), (), ())
    return Trajectory(user, tuple(items), tuple(rewards), tuple(cats),
                      state.termination_reason if state.terminated else "exhausted")


def trajectory_metrics(traj: Trajectory, dominated: set[int]) -> TrajectoryMetrics:
    r_tra = traj.r_tra
    return TrajectoryMetrics(r_tra, r_tra / traj.length, traj.length, mcd([traj], dominated))


def mcd(trajectories: Iterable[Trajectory], dominated: set[int]) -> float:
    """Share of recommended items whose category is dominated, pooled."""
    total = hit = 0
    for tr in trajectories:
        total += len(tr.categories)
        hit += sum(c in dominated for c in tr.categories)
    if total == 0:
        raise ValueError("mcd of zero recommendations")
    return hit / total


@dataclass(frozen=True)
class EvalResult:
    mean: dict[str, float]
    std: dict[str, float]
    trajectories: tuple[Trajectory, ...]

    def row(self) -> dict[str, float]:
        out = {}
        for m in ("r_tra", "r_each", "length"):
            out[f"{m}_mean"] = self.mean[m]
            out[f"{m}_std"] = self.std[m]
        out["mcd"] = self.mean["mcd"]
        return out


def evaluate(world: WorldSpec, agent: Agent, n_episodes: int = 100, seed: int = 0,
             dominated: set[int] | None = None) -> EvalResult:
    """Run ``n_episodes`` episodes on uniformly drawn users.

    ``mcd`` in ``mean`` is pooled over all recommendations; its ``std`` is
    across per-trajectory values.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    dominated = set() if dominated is None else dominated
    rng = np.random.default_rng(seed)
    users = rng.integers(world.n_users, size=n_episodes)
    seeds = rng.integers(2 ** 31, size=n_episodes)
    trajs = tuple(run_episode(world, agent, int(u), int(s)) for u, s in zip(users, seeds))
    per = [trajectory_metrics(t, dominated) for t in trajs]
    mean, std = {}, {}
    for m in METRICS:
        v = np.array([getattr(p, m) for p in per], dtype=float)
        mean[m], std[m] = float(v.mean()), float(v.std())
    mean["mcd"] = mcd(trajs, dominated)
    return EvalResult(mean, std, trajs)


# --------------------------------------------------------------------------- log analytics


def repeat_rates(logs: LogTable) -> dict[tuple[int, int], tuple[float, float]]:
    """Per (user, day): events / unique items and events / unique categories."""
    events: dict[tuple[int, int], int] = defaultdict(int)
    items: dict[tuple[int, int], set] = defaultdict(set)
    cats: dict[tuple[int, int], set] = defaultdict(set)
    days = logs.timestamp // SECONDS_PER_DAY
    for u, d, i, c in zip(logs.user_id.tolist(), days.tolist(), logs.item_id.tolist(),
                          logs.category_id.tolist()):
        key = (u, d)
        events[key] += 1
        items[key].add(i)
        cats[key].add(c)
    return {k: (n / len(items[k]), n / len(cats[k])) for k, n in events.items()}


def _bucket_label(n: int, edges: Sequence[float]) -> str | None:
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo <= n < hi:
            return f"[{lo:g},{hi:g})"
    return None


def day1_retention(logs: LogTable, activity_buckets: Sequence[float] = (1, float("inf"))
                   ) -> dict[str, float]:
    """Share of user-days followed by activity on the next day, by events-per-day bucket.

    ``activity_buckets`` are half-open bucket edges. User-days on the last
    day of the log have no observable tomorrow and are left out.
    """
    days = logs.timestamp // SECONDS_PER_DAY
    if len(np.unique(days)) < 2:
        raise ValueError("day-1 retention needs at least two distinct days")
    last_day = int(days.max())
    per_day: dict[tuple[int, int], int] = defaultdict(int)
    for u, d in zip(logs.user_id.tolist(), days.tolist()):
        per_day[(u, d)] += 1
    retained: dict[str, int] = defaultdict(int)
    total: dict[str, int] = defaultdict(int)
    for (u, d), n in per_day.items():
        if d >= last_day:
            continue
        label = _bucket_label(n, list(activity_buckets))
        if label is None:
            continue
        total[label] += 1
        retained[label] += (u, d + 1) in per_day
    return {k: retained[k] / total[k] for k in total}


# --------------------------------------------------------------------------- sweeps


def expand_grid(grid: Mapping[str, Sequence]) -> list[dict]:
    keys = list(grid)
    if not keys or any(len(grid[k]) == 0 for k in keys):
        raise ValueError("sweep grid must be non-empty")
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def sweep(grid: Mapping[str, Sequence], run_point: Callable[[dict], EvalResult]) -> list[dict]:
    """Run ``run_point`` on every grid point; one row per point with
    ``param_*`` columns followed by the aggregate metrics."""
    rows = []
    for point in expand_grid(grid):
        res = run_point(point)
        rows.append({**{f"param_{k}": v for k, v in point.items()}, **res.row()})
    return rows


def marginalize(rows: Sequence[dict], over: str) -> list[dict]:
    """Average metric columns across values of ``param_<over>``."""
    col = f"param_{over}"
    params = [k for k in rows[0] if k.startswith("param_") and k != col]
    metrics = [k for k in rows[0] if not k.startswith("param_")]
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for r in rows:
        groups[tuple(r[p] for p in params)].append(r)
    out = []
    for key, rs in groups.items():
        out.append({**dict(zip(params, key)),
                    **{m: float(np.mean([r[m] for r in rs])) for m in metrics}})
    return out


def write_results_csv(rows: Sequence[dict], path: str | Path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    fields = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
