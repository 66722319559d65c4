"""Average-layer state tracker, advantage actor-critic policy and bandit baselines."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .optim import Adam
from .penalty import EntropyIndex, PenaltyConfig, entropy_penalty, modified_reward

POLICY_VERSION = 1


class PolicyError(RuntimeError):
    pass


# --------------------------------------------------------------------------- state


@dataclass(frozen=True)
class StateTrackerConfig:
    window: int = 10
    emb_dim: int = 32
    eps: float = 1e-6

    def __post_init__(self):
        if self.window < 1 or self.emb_dim < 1:
            raise ValueError("window and emb_dim must be >= 1")


@dataclass
class RewardNormalizer:
    """Running min/max affine map of modified rewards into [eps, 1]."""

    lo: float = math.inf
    hi: float = -math.inf
    eps: float = 1e-6

    def update(self, values) -> None:
        v = np.asarray(values, dtype=float)
        if v.size:
            self.lo = min(self.lo, float(v.min()))
            self.hi = max(self.hi, float(v.max()))

    def __call__(self, values):
        v = np.asarray(values, dtype=float)
        if not math.isfinite(self.lo):
            return np.ones_like(v)
        span = max(self.hi - self.lo, self.eps)
        return np.clip(self.eps + (1 - self.eps) * (v - self.lo) / span, self.eps, 1.0)


def encode_state(history: Sequence[tuple[int, float]], tracker: StateTrackerConfig,
                 embeddings: np.ndarray, normalize=None) -> np.ndarray:
    """Mean of ``e_item (+) norm(reward)`` over the last ``tracker.window`` pairs.

    Rewards are used as given unless a ``normalize`` callable is supplied.
    """
    d = embeddings.shape[1]
    if not history:
        return np.zeros(d + 1)
    recent = history[-tracker.window:]
    items = np.array([h[0] for h in recent], dtype=np.int64)
    r = np.array([h[1] for h in recent], dtype=float)
    if normalize is not None:
        r = np.asarray(normalize(r), dtype=float)
    return np.concatenate([embeddings[items].mean(axis=0), [r.mean()]])


# --------------------------------------------------------------------------- actor-critic


@dataclass(frozen=True)
class ACHyper:
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    gamma: float = 0.9
    entropy_coef: float = 0.01
    rollout_len: int = 30
    episodes_per_epoch: int = 256
    epochs: int = 20
    batch_episodes: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.rollout_len < 1 or self.epochs < 0 or self.batch_episodes < 1:
            raise ValueError("rollout_len, batch_episodes must be >= 1 and epochs >= 0")


@dataclass
class ActorCritic:
    item_embeddings: np.ndarray  # [n_items, d], fixed features
    actor_w: np.ndarray  # [d+1, n_items]
    actor_b: np.ndarray  # [n_items]
    critic_w: np.ndarray  # [d+1]
    critic_b: np.ndarray  # 0-d
    hyper: ACHyper = field(default_factory=ACHyper)
    tracker: StateTrackerConfig = field(default_factory=StateTrackerConfig)
    normalizer: RewardNormalizer = field(default_factory=RewardNormalizer)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    history: list[dict] = field(default_factory=list)

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"actor_w": self.actor_w, "actor_b": self.actor_b,
                "critic_w": self.critic_w, "critic_b": self.critic_b}

    def value(self, states: np.ndarray) -> np.ndarray:
        return states @ self.critic_w + self.critic_b


def make_item_embeddings(n_items: int, d: int, rng: np.random.Generator,
                         item_category: np.ndarray | None = None) -> np.ndarray:
    """Fixed item features. With categories, the first n_categories columns
    hold a one-hot category code and the rest are N(0, 1/d) noise."""
    emb = rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_items, d))
    if item_category is not None:
        n_cat = int(item_category.max()) + 1
        if n_cat > d:
            raise ValueError(f"emb_dim {d} too small for {n_cat} categories")
        emb[:, :n_cat] = 0.0
        emb[np.arange(n_items), item_category] = 1.0
    return emb


def init_actor_critic(n_items: int, hyper: ACHyper = ACHyper(),
                      tracker: StateTrackerConfig = StateTrackerConfig(),
                      item_category: np.ndarray | None = None) -> ActorCritic:
    rng = np.random.default_rng(hyper.seed)
    d = tracker.emb_dim
    emb = make_item_embeddings(n_items, d, rng, item_category)
    return ActorCritic(emb, np.zeros((d + 1, n_items)), np.zeros(n_items), np.zeros(d + 1),
                       np.zeros(()), hyper, tracker, RewardNormalizer(eps=tracker.eps))


def _masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def actor_forward(ac: ActorCritic, state_vec: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise PolicyError("every item is masked")
    return _masked_softmax(state_vec @ ac.actor_w + ac.actor_b, mask)


def act(ac: ActorCritic, state_vec, mask, mode: str = "greedy",
        rng: np.random.Generator | None = None) -> int:
    probs = actor_forward(ac, np.asarray(state_vec, dtype=float), mask)
    return select_action(probs, mask, mode, rng)


def select_action(probs: np.ndarray, mask, mode: str = "greedy",
                  rng: np.random.Generator | None = None) -> int:
    if mode == "greedy":
        # argmax returns the first (lowest-id) maximiser
        return int(np.argmax(np.where(mask, probs, -1.0)))
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling needs an rng")
        return int(rng.choice(len(probs), p=probs))
    raise ValueError(f"unknown mode {mode!r}")


def ac_loss_and_grads(params: dict[str, np.ndarray], states: np.ndarray, actions: np.ndarray,
                      masks: np.ndarray, advantages: np.ndarray, targets: np.ndarray,
                      entropy_coef: float):
    """Mean actor and critic losses over a batch of transitions.

    actor  = mean[-A log pi(a|s) - entropy_coef * H(pi(.|s))]   (A held fixed)
    critic = mean[(target - V(s))^2]                            (target held fixed)
    """
    n = len(actions)
    logits = states @ params["actor_w"] + params["actor_b"]
    probs = _masked_softmax(logits, masks)
    with np.errstate(divide="ignore"):
        logp = np.where(masks, np.log(np.where(masks, probs, 1.0)), 0.0)
    ent = -(probs * logp).sum(axis=1)
    rows = np.arange(n)
    actor_loss = float(np.mean(-advantages * logp[rows, actions] - entropy_coef * ent))

    # d/dz of -A log pi_a is -A (onehot - pi); of -c H is c pi (log pi + H)
    g_z = probs * advantages[:, None]
    g_z[rows, actions] -= advantages
    g_z += entropy_coef * probs * (logp + ent[:, None])
    g_z = np.where(masks, g_z, 0.0) / n

    v = states @ params["critic_w"] + params["critic_b"]
    err = targets - v
    critic_loss = float(np.mean(err ** 2))
    g_v = -2.0 * err / n
    grads = {
        "actor_w": states.T @ g_z,
        "actor_b": g_z.sum(axis=0),
        "critic_w": states.T @ g_v,
        "critic_b": np.asarray(g_v.sum()),
    }
    return actor_loss, critic_loss, grads


class _Rollout:
    """Vectorised batch of simulated episodes against the reward model."""

    def __init__(self, ac: ActorCritic, r_hat: np.ndarray, p_u: np.ndarray,
                 index: EntropyIndex | None, cfg: PenaltyConfig):
        self.ac, self.r_hat, self.p_u, self.index, self.cfg = ac, r_hat, p_u, index, cfg

    def run(self, users: np.ndarray, rng: np.random.Generator):
        ac = self.ac
        B = len(users)
        T = ac.hyper.rollout_len
        n, d = ac.item_embeddings.shape
        N = ac.tracker.window
        mask = np.ones((B, n), dtype=bool)
        items = np.zeros((B, T), dtype=np.int64)
        rnorm = np.zeros((B, T))
        states = np.zeros((T + 1, B, d + 1))
        masks = np.zeros((T, B, n), dtype=bool)
        actions = np.zeros((T, B), dtype=np.int64)
        rewards = np.zeros((T, B))
        rows = np.arange(B)
        for t in range(T):
            s = states[t]
            probs = _masked_softmax(s @ ac.actor_w + ac.actor_b, mask)
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(B)[:, None] * cdf[:, -1:]
            a = np.minimum((cdf < u).sum(axis=1), n - 1)
            # guard against landing on a masked item through round-off
            bad = ~mask[rows, a]
            if bad.any():
                a[bad] = np.argmax(np.where(mask[bad], probs[bad], -1.0), axis=1)
            masks[t] = mask
            actions[t] = a
            items[:, t] = a
            mask[rows, a] = False
            pe = np.zeros(B)
            if self.index is not None and self.cfg.lambda2 != 0.0:
                for b in range(B):
                    pe[b] = entropy_penalty(self.index, items[b, :t + 1])
            r = modified_reward(self.r_hat[users, a], self.p_u[users, a], pe, self.cfg)
            rewards[t] = r
            ac.normalizer.update(r)
            rnorm[:, t] = ac.normalizer(r)
            lo = max(0, t + 1 - N)
            states[t + 1, :, :d] = ac.item_embeddings[items[:, lo:t + 1]].mean(axis=1)
            states[t + 1, :, d] = rnorm[:, lo:t + 1].mean(axis=1)
        return states, masks, actions, rewards


def train_policy(ensemble, index: EntropyIndex | None, penalty_cfg: PenaltyConfig,
                 world_dims: tuple[int, int], ac: ActorCritic) -> ActorCritic:
    """Advantage actor-critic on simulated users; the reward is
    r_hat - lambda1 * P_U + lambda2 * P_E. Returns ``ac`` trained in place."""
    n_users, n_items = world_dims
    if ensemble.n_items != n_items or ac.n_items != n_items:
        raise ValueError("ensemble, policy and world disagree on n_items")
    if index is not None and index.n_items != n_items:
        raise ValueError("entropy index built on a different item universe")
    r_hat = ensemble.reward_matrix()
    p_u = ensemble.uncertainty_matrix()
    return train_policy_on_tables(r_hat, p_u, index, penalty_cfg, ac)


def train_policy_on_tables(r_hat: np.ndarray, p_u: np.ndarray, index: EntropyIndex | None,
                           penalty_cfg: PenaltyConfig, ac: ActorCritic) -> ActorCritic:
    h = ac.hyper
    ac.penalty = penalty_cfg
    rng = np.random.default_rng(h.seed + 1)
    params = ac.params()
    actor_opt = Adam({k: params[k] for k in ("actor_w", "actor_b")}, h.lr_actor)
    critic_opt = Adam({k: params[k] for k in ("critic_w", "critic_b")}, h.lr_critic)
    roll = _Rollout(ac, r_hat, p_u, index, penalty_cfg)
    n_users = r_hat.shape[0]
    for epoch in range(h.epochs):
        done = 0
        stats = []
        while done < h.episodes_per_epoch:
            B = min(h.batch_episodes, h.episodes_per_epoch - done)
            users = rng.integers(n_users, size=B)
            states, masks, actions, rewards = roll.run(users, rng)
            T = len(actions)
            v = ac.value(states)  # [T+1, B]
            v_next = np.concatenate([v[1:T], np.zeros((1, B))])
            targets = rewards + h.gamma * v_next
            adv = targets - v[:T]
            D = states.shape[-1]
            a_loss, c_loss, grads = ac_loss_and_grads(
                params, states[:T].reshape(-1, D), actions.reshape(-1),
                masks.reshape(T * B, -1), adv.reshape(-1), targets.reshape(-1), h.entropy_coef)
            if not (np.isfinite(a_loss) and np.isfinite(c_loss)):
                raise PolicyError("actor-critic loss became NaN; lower the learning rates")
            actor_opt.step(params, {k: grads[k] for k in ("actor_w", "actor_b")})
            critic_opt.step(params, {k: grads[k] for k in ("critic_w", "critic_b")})
            stats.append((a_loss, c_loss, float(rewards.sum(axis=0).mean())))
            done += B
        a, c, ret = np.mean(stats, axis=0)
        ac.history.append({"epoch": epoch, "actor_loss": float(a), "critic_loss": float(c),
                           "sim_return": float(ret)})
    return ac


# --------------------------------------------------------------------------- bandits


def epsilon_greedy_act(r_hat_row: np.ndarray, mask, epsilon: float,
                       rng: np.random.Generator) -> int:
    """Uniform over unmasked items with probability epsilon, else argmax r_hat."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    mask = np.asarray(mask, dtype=bool)
    allowed = np.flatnonzero(mask)
    if allowed.size == 0:
        raise PolicyError("every item is masked")
    if rng.random() < epsilon:
        return int(allowed[rng.integers(allowed.size)])
    return int(allowed[np.argmax(np.asarray(r_hat_row)[allowed])])


@dataclass
class UCBState:
    counts: np.ndarray
    means: np.ndarray

    @classmethod
    def empty(cls, n_items: int) -> "UCBState":
        return cls(np.zeros(n_items), np.zeros(n_items))

    @classmethod
    def from_logs(cls, logs) -> "UCBState":
        counts = np.bincount(logs.item_id, minlength=logs.n_items).astype(float)
        sums = np.bincount(logs.item_id, weights=logs.reward, minlength=logs.n_items)
        means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
        return cls(counts, means)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def update(self, item: int, reward: float) -> None:
        self.counts[item] += 1
        self.means[item] += (reward - self.means[item]) / self.counts[item]


def ucb_act(ucb: UCBState, mask) -> int:
    mask = np.asarray(mask, dtype=bool)
    allowed = np.flatnonzero(mask)
    if allowed.size == 0:
        raise PolicyError("every item is masked")
    unpulled = allowed[ucb.counts[allowed] == 0]
    if unpulled.size:
        return int(unpulled[0])
    n = ucb.counts[allowed]
    score = ucb.means[allowed] + np.sqrt(2.0 * math.log(ucb.total) / n)
    return int(allowed[np.argmax(score)])


# --------------------------------------------------------------------------- agents


class PolicyAgent:
    """Evaluation-time wrapper: rebuilds the modified reward from the observed
    true reward so the state matches what the policy saw in training."""

    def __init__(self, ac: ActorCritic, p_u: np.ndarray | None = None,
                 index: EntropyIndex | None = None, mode: str = "greedy"):
        self.ac, self.p_u, self.index, self.mode = ac, p_u, index, mode
        self._hist: list[tuple[int, float]] = []
        self._user = 0

    def reset(self, user_id: int) -> None:
        self._hist = []
        self._user = user_id

    def act(self, mask: np.ndarray, rng: np.random.Generator) -> int:
        s = encode_state(self._hist, self.ac.tracker, self.ac.item_embeddings)
        return act(self.ac, s, mask, self.mode, rng)

    def observe(self, item: int, reward: float) -> None:
        cfg = self.ac.penalty
        pu = float(self.p_u[self._user, item]) if self.p_u is not None else 0.0
        items = [h[0] for h in self._hist] + [item]
        pe = entropy_penalty(self.index, items) if self.index is not None else 0.0
        r_tilde = modified_reward(reward, pu, pe, cfg)
        self._hist.append((item, float(self.ac.normalizer(r_tilde))))


class EpsilonGreedyAgent:
    def __init__(self, r_hat: np.ndarray, epsilon: float = 0.1):
        self.r_hat, self.epsilon = r_hat, epsilon
        self._user = 0

    def reset(self, user_id: int) -> None:
        self._user = user_id

    def act(self, mask, rng) -> int:
        return epsilon_greedy_act(self.r_hat[self._user], mask, self.epsilon, rng)

    def observe(self, item: int, reward: float) -> None:
        pass


class UCBAgent:
    """Item-level UCB seeded from the training log and updated online."""

    def __init__(self, ucb: UCBState):
        self.ucb = ucb

    def reset(self, user_id: int) -> None:
        pass

    def act(self, mask, rng) -> int:
        return ucb_act(self.ucb, mask)

    def observe(self, item: int, reward: float) -> None:
        self.ucb.update(item, reward)


class FixedOrderAgent:
    """Always recommends the lowest unmasked item id (test helper)."""

    def reset(self, user_id: int) -> None:
        pass

    def act(self, mask, rng) -> int:
        return int(np.flatnonzero(mask)[0])

    def observe(self, item: int, reward: float) -> None:
        pass


# --------------------------------------------------------------------------- persistence


def save_policy(ac: ActorCritic, path: str | Path, **extra) -> None:
    payload = {
        "version": POLICY_VERSION,
        "hyper": asdict(ac.hyper),
        "tracker": asdict(ac.tracker),
        "penalty": {**asdict(ac.penalty), "orders": list(ac.penalty.orders)},
        "normalizer": {"lo": ac.normalizer.lo, "hi": ac.normalizer.hi, "eps": ac.normalizer.eps},
        "params": {k: np.asarray(v).tolist() for k, v in ac.params().items()},
        "item_embeddings": ac.item_embeddings.tolist(),
        "history": ac.history,
        **extra,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_policy(path: str | Path) -> ActorCritic:
    p = json.loads(Path(path).read_text(encoding="utf-8"))
    if p.get("version") != POLICY_VERSION:
        raise ValueError(f"unsupported policy version {p.get('version')!r}")
    pen = dict(p["penalty"])
    pen["orders"] = tuple(pen["orders"])
    prm = {k: np.asarray(v, dtype=float) for k, v in p["params"].items()}
    emb = np.asarray(p["item_embeddings"], dtype=float)
    d = emb.shape[1]
    if prm["actor_w"].shape != (d + 1, emb.shape[0]) or prm["critic_w"].shape != (d + 1,):
        raise ValueError("policy parameter shapes do not match the embeddings")
    return ActorCritic(emb, prm["actor_w"], prm["actor_b"], prm["critic_w"],
                       prm["critic_b"].reshape(()), ACHyper(**p["hyper"]),
                       StateTrackerConfig(**p["tracker"]), RewardNormalizer(**p["normalizer"]),
                       PenaltyConfig(**pen), list(p.get("history", [])))
