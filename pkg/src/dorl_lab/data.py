"""Offline logs, synthetic worlds and behavior-policy log generation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .env import QuitRule

LOG_HEADER = ("user_id", "item_id", "timestamp", "reward", "category_id")
WORLD_VERSION = 1


class LogParseError(ValueError):
    """Malformed CSV row; carries the 1-based line number."""

    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class LogValidationError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    user_id: int
    item_id: int
    timestamp: int
    reward: float
    category_id: int


@dataclass(frozen=True, eq=False)
class LogTable:
    """Columnar interaction log sorted by (user_id, timestamp).

    Columns are plain numpy arrays; ``records`` materialises the row view.
    """

    user_id: np.ndarray
    item_id: np.ndarray
    timestamp: np.ndarray
    reward: np.ndarray
    category_id: np.ndarray
    n_users: int
    n_items: int
    n_categories: int

    @classmethod
    def from_columns(cls, user_id, item_id, timestamp, reward, category_id,
                     n_users=None, n_items=None, n_categories=None) -> "LogTable":
        u = np.asarray(user_id, dtype=np.int64)
        i = np.asarray(item_id, dtype=np.int64)
        t = np.asarray(timestamp, dtype=np.int64)
        r = np.asarray(reward, dtype=np.float64)
        c = np.asarray(category_id, dtype=np.int64)
        if not (len(u) == len(i) == len(t) == len(r) == len(c)):
            raise LogValidationError("column lengths differ")
        if len(u):
            if (u < 0).any() or (i < 0).any() or (c < 0).any():
                raise LogValidationError("ids must be non-negative")
            if ((r < 0) | (r > 1) | ~np.isfinite(r)).any():
                bad = int(np.flatnonzero((r < 0) | (r > 1) | ~np.isfinite(r))[0])
                raise LogValidationError(f"reward {r[bad]} outside [0, 1]")
        order = np.lexsort((t, u))
        u, i, t, r, c = u[order], i[order], t[order], r[order], c[order]
        n_users = int(u.max()) + 1 if n_users is None and len(u) else (n_users or 0)
        n_items = int(i.max()) + 1 if n_items is None and len(i) else (n_items or 0)
        n_categories = (int(c.max()) + 1 if n_categories is None and len(c)
                        else (n_categories or 0))
        if len(u) and (u.max() >= n_users or i.max() >= n_items or c.max() >= n_categories):
            raise LogValidationError("id exceeds declared table size")
        return cls(u, i, t, r, c, int(n_users), int(n_items), int(n_categories))

    def __len__(self) -> int:
        return len(self.user_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LogTable):
            return NotImplemented
        return (
            (self.n_users, self.n_items, self.n_categories)
            == (other.n_users, other.n_items, other.n_categories)
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in LOG_HEADER)
        )

    @property
    def records(self) -> list[InteractionRecord]:
        return [
            InteractionRecord(int(u), int(i), int(t), float(r), int(c))
            for u, i, t, r, c in zip(self.user_id, self.item_id, self.timestamp,
                                     self.reward, self.category_id)
        ]

    def user_sequences(self) -> Iterator[tuple[int, np.ndarray]]:
        """Yield (user, item sequence) in timestamp order."""
        if not len(self):
            return
        bounds = np.flatnonzero(np.diff(self.user_id)) + 1
        starts = np.concatenate(([0], bounds))
        ends = np.concatenate((bounds, [len(self)]))
        for s, e in zip(starts, ends):
            yield int(self.user_id[s]), self.item_id[s:e]

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.item_id, minlength=self.n_items)

    def category_counts(self) -> np.ndarray:
        return np.bincount(self.category_id, minlength=self.n_categories)


def load_logs(path: str | Path) -> LogTable:
    cols: list[list] = [[] for _ in LOG_HEADER]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LOG_HEADER:
            raise LogParseError(1, f"expected header {','.join(LOG_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(LOG_HEADER):
                raise LogParseError(line, f"expected {len(LOG_HEADER)} fields, got {len(row)}")
            try:
                u, i, t = int(row[0]), int(row[1]), int(row[2])
                r = float(row[3])
                c = int(row[4])
            except ValueError as exc:
                raise LogParseError(line, str(exc)) from None
            if not 0.0 <= r <= 1.0:
                raise LogValidationError(f"line {line}: reward {r} outside [0, 1]")
            for col, v in zip(cols, (u, i, t, r, c)):
                col.append(v)
    return LogTable.from_columns(*cols)


def write_logs(logs: LogTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for rec in logs.records:
            w.writerow([rec.user_id, rec.item_id, rec.timestamp, repr(rec.reward), rec.category_id])


@dataclass(frozen=True, eq=False)
class WorldSpec:
    """Ground-truth user preferences plus the evaluation quit rule."""

    n_users: int
    n_items: int
    n_categories: int
    preference: np.ndarray
    item_category: np.ndarray
    quit_rule: QuitRule = field(default_factory=lambda: QuitRule(4, 0))
    max_rounds: int = 30

    def __post_init__(self):
        if self.preference.shape != (self.n_users, self.n_items):
            raise ValueError(f"preference shape {self.preference.shape} != "
                             f"({self.n_users}, {self.n_items})")
        if ((self.preference < 0) | (self.preference > 1)).any():
            raise ValueError("preference entries must lie in [0, 1]")
        if self.item_category.shape != (self.n_items,):
            raise ValueError("item_category must have length n_items")
        if len(self.item_category) and (
            self.item_category.min() < 0 or self.item_category.max() >= self.n_categories
        ):
            raise ValueError("item category outside [0, n_categories)")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")

    def with_quit_rule(self, rule: QuitRule, max_rounds: int | None = None) -> "WorldSpec":
        return WorldSpec(self.n_users, self.n_items, self.n_categories, self.preference,
                         self.item_category, rule,
                         self.max_rounds if max_rounds is None else max_rounds)

    def to_json(self) -> dict:
        return {
            "version": WORLD_VERSION,
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_categories": self.n_categories,
            "item_category": self.item_category.tolist(),
            "preference": self.preference.tolist(),
            "quit_rule": {"window": self.quit_rule.window, "tolerance": self.quit_rule.tolerance},
            "max_rounds": self.max_rounds,
        }

    @classmethod
    def from_json(cls, d: dict) -> "WorldSpec":
        if d.get("version") != WORLD_VERSION:
            raise ValueError(f"unsupported world version {d.get('version')!r}")
        q = d["quit_rule"]
        return cls(
            n_users=int(d["n_users"]),
            n_items=int(d["n_items"]),
            n_categories=int(d["n_categories"]),
            preference=np.asarray(d["preference"], dtype=np.float64).reshape(
                int(d["n_users"]), int(d["n_items"])),
            item_category=np.asarray(d["item_category"], dtype=np.int64),
            quit_rule=QuitRule(int(q["window"]), int(q["tolerance"])),
            max_rounds=int(d["max_rounds"]),
        )


def save_world(world: WorldSpec, path: str | Path, **extra) -> None:
    Path(path).write_text(json.dumps({**world.to_json(), **extra}), encoding="utf-8")


def load_world(path: str | Path) -> WorldSpec:
    return WorldSpec.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def block_categories(n_items: int, n_categories: int) -> np.ndarray:
    """Contiguous, near-equal category blocks over the item index."""
    return (np.arange(n_items) * n_categories) // n_items


def generate_world(n_users: int, n_items: int, n_categories: int, latent_dim: int = 4,
                   noise_scale: float = 0.0, seed: int = 0, *,
                   quit_rule: QuitRule | None = None, max_rounds: int = 30,
                   zero_latent: bool = False) -> WorldSpec:
    """Low-rank sigmoid preference matrix with block item categories.

    ``zero_latent`` forces all latent factors to zero (debugging aid).
    """
    if min(n_users, n_items, n_categories) < 1 or latent_dim < 1:
        raise ValueError("counts and latent_dim must be >= 1")
    if not 0.0 <= noise_scale < 0.5:
        raise ValueError("noise_scale must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(latent_dim)
    x = rng.standard_normal((n_users, latent_dim)) * scale
    y = rng.standard_normal((n_items, latent_dim)) * scale
    if zero_latent:
        x[:] = 0.0
        y[:] = 0.0
    eps = rng.uniform(-noise_scale, noise_scale, size=(n_users, n_items))
    pref = np.clip(1.0 / (1.0 + np.exp(-(x @ y.T))) + eps, 0.0, 1.0)
    return WorldSpec(n_users, n_items, n_categories, pref,
                     block_categories(n_items, n_categories),
                     quit_rule if quit_rule is not None else QuitRule(4, 0), max_rounds)


@dataclass(frozen=True)
class BehaviorPolicyConfig:
    """Logging-policy distribution over items.

    ``popularity_softmax`` draws from softmax(pref[u] / temperature +
    popularity_strength * bump(i)); the default strength of 1 gives the plain
    unit-height Gaussian bump. ``diversity_window`` W > 0 makes the logger
    refuse any item whose category appeared among the user's previous W
    logged items (renormalising over the rest), as a production
    recommender with a category-diversity rule would.
    """

    kind: str = "popularity_softmax"
    temperature: float = 1.0
    popularity_center: float = 0.0
    popularity_width: float = 10.0
    popularity_strength: float = 1.0
    diversity_window: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "popularity_softmax"):
            raise ValueError(f"unknown behavior kind {self.kind!r}")
        if self.temperature <= 0 or self.popularity_width <= 0:
            raise ValueError("temperature and popularity_width must be positive")
        if self.diversity_window < 0:
            raise ValueError("diversity_window must be >= 0")

    def item_distribution(self, preference_row: np.ndarray) -> np.ndarray:
        n = len(preference_row)
        if self.kind == "uniform":
            return np.full(n, 1.0 / n)
        idx = np.arange(n)
        bump = np.exp(-((idx - self.popularity_center) ** 2) / (2 * self.popularity_width ** 2))
        logits = preference_row / self.temperature + self.popularity_strength * bump
        p = np.exp(logits - logits.max())
        return p / p.sum()


def generate_logs(world: WorldSpec, behavior: BehaviorPolicyConfig, events_per_user: int,
                  seed: int = 0) -> LogTable:
    if events_per_user < 1:
        raise ValueError("events_per_user must be >= 1")
    rng = np.random.default_rng(seed)
    users, items = [], []
    W = behavior.diversity_window
    for u in range(world.n_users):
        p = behavior.item_distribution(world.preference[u])
        if W == 0:
            seq = rng.choice(world.n_items, size=events_per_user, p=p)
        else:
            seq = np.empty(events_per_user, dtype=np.int64)
            for t in range(events_per_user):
                banned = world.item_category[seq[max(0, t - W):t]]
                q = np.where(np.isin(world.item_category, banned), 0.0, p)
                if q.sum() == 0:
                    raise ValueError("diversity_window bans every category")
                seq[t] = rng.choice(world.n_items, p=q / q.sum())
        items.append(seq)
        users.append(np.full(events_per_user, u))
    u = np.concatenate(users)
    i = np.concatenate(items)
    t = np.tile(np.arange(events_per_user), world.n_users)
    return LogTable.from_columns(u, i, t, world.preference[u, i], world.item_category[i],
                                 world.n_users, world.n_items, world.n_categories)


def dominated_categories(logs: LogTable, coverage: float = 0.8) -> set[int]:
    """Smallest set of most-interacted categories covering ``coverage`` of all events."""
    if not 0.0 < coverage <= 1.0:
        raise ValueError("coverage must lie in (0, 1]")
    if not len(logs):
        raise ValueError("dominated_categories needs a non-empty log")
    counts = logs.category_counts()
    order = sorted(range(len(counts)), key=lambda c: (-counts[c], c))
    need = coverage * counts.sum()
    out: set[int] = set()
    cum = 0
    for c in order:
        if counts[c] == 0:
            break
        out.add(c)
        cum += counts[c]
        if cum >= need - 1e-9:
            break
    return out


def records_to_table(records: Sequence[InteractionRecord], **sizes) -> LogTable:
    cols = list(zip(*[(r.user_id, r.item_id, r.timestamp, r.reward, r.category_id)
                      for r in records])) or [[] for _ in LOG_HEADER]
    return LogTable.from_columns(*cols, **sizes)
