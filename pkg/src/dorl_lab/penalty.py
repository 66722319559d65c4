"""Behavior-entropy penalty from a k-order pattern index, and the modified reward."""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import LogTable

INDEX_VERSION = 1

PatternKey = tuple[int, ...]


@dataclass
class EntropyIndex:
    """Counts of next items following each sorted k-item window in the logs."""

    orders: tuple[int, ...]
    tables: dict[int, dict[PatternKey, Counter]]
    n_items: int
    _entropy_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def lookup(self, k: int, window: Iterable[int]) -> Counter | None:
        return self.tables[k].get(tuple(sorted(int(x) for x in window)))

    def entropy(self, k: int, key: PatternKey) -> float:
        """Normalised entropy for a stored key, 0 for unseen keys. Cached."""
        ck = (k, key)
        v = self._entropy_cache.get(ck)
        if v is None:
            counts = self.tables[k].get(key)
            v = normalized_entropy(counts) if counts else 0.0
            self._entropy_cache[ck] = v
        return v

    def to_json(self) -> dict:
        entries = {}
        for k in self.orders:
            for key, nxt in self.tables[k].items():
                pat = ",".join(map(str, key))
                for item, c in nxt.items():
                    entries[f"{k}/{pat}/{item}"] = c
        return {"version": INDEX_VERSION, "orders": list(self.orders), "n_items": self.n_items,
                "counts": entries}

    @classmethod
    def from_json(cls, d: dict) -> "EntropyIndex":
        if d.get("version") != INDEX_VERSION:
            raise ValueError(f"unsupported index version {d.get('version')!r}")
        orders = tuple(int(k) for k in d["orders"])
        tables: dict[int, dict[PatternKey, Counter]] = {k: defaultdict(Counter) for k in orders}
        for name, c in d["counts"].items():
            k, pat, item = name.split("/")
            key = tuple(int(x) for x in pat.split(","))
            tables[int(k)][key][int(item)] = int(c)
        return cls(orders, {k: dict(v) for k, v in tables.items()}, int(d["n_items"]))


def save_index(index: EntropyIndex, path: str | Path, **extra) -> None:
    Path(path).write_text(json.dumps({**index.to_json(), **extra}), encoding="utf-8")


def load_index(path: str | Path) -> EntropyIndex:
    return EntropyIndex.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_entropy_index(logs: LogTable, orders: Sequence[int] = (1, 2, 3)) -> EntropyIndex:
    orders = tuple(sorted(set(int(k) for k in orders)))
    if not orders or orders[0] < 1:
        raise ValueError("orders must be positive integers")
    tables: dict[int, dict[PatternKey, Counter]] = {k: defaultdict(Counter) for k in orders}
    for _, seq in logs.user_sequences():
        seq = seq.tolist()
        for k in orders:
            tab = tables[k]
            for t in range(k, len(seq)):
                tab[tuple(sorted(seq[t - k:t]))][seq[t]] += 1
    return EntropyIndex(orders, {k: dict(v) for k, v in tables.items()}, logs.n_items)


def normalized_entropy(count_map: Mapping[int, int]) -> float:
    """Shannon entropy of the next-item counts divided by ln(#distinct);
    a single distinct next item gives 0."""
    if not count_map:
        raise ValueError("normalized_entropy of an empty count map")
    counts = np.fromiter(count_map.values(), dtype=float)
    c = len(counts)
    if c == 1:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum() / math.log(c))


def entropy_penalty(index: EntropyIndex, recent_items: Sequence[int]) -> float:
    """Sum over orders of the normalised entropy at the last-k pattern;
    unseen patterns and too-short histories contribute 0."""
    total = 0.0
    n = len(recent_items)
    for k in index.orders:
        if n < k:
            continue
        key = tuple(sorted(int(x) for x in recent_items[n - k:]))
        total += index.entropy(k, key)
    return total


@dataclass(frozen=True)
class PenaltyConfig:
    lambda1: float = 0.0
    lambda2: float = 0.0
    orders: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("penalty weights must be non-negative")


def modified_reward(r_hat, p_u, p_e, cfg: PenaltyConfig):
    return r_hat - cfg.lambda1 * p_u + cfg.lambda2 * p_e


def kl_to_uniform(dist) -> float:
    """KL(p || uniform) over len(p) actions, checked against ln|A| - H(p)."""
    p = np.asarray(dist, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("distribution must be a non-empty vector")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("distribution must be non-negative and sum to 1")
    n = p.size
    nz = p[p > 0]
    kl = float(np.sum(nz * (np.log(nz) + math.log(n))))
    h = float(-np.sum(nz * np.log(nz)))
    assert abs(kl - (math.log(n) - h)) < 1e-9
    return kl
