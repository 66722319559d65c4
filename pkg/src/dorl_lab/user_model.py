"""Ensemble of Gaussian probabilistic matrix-factorisation reward models.

Each member predicts a mean ``mu = g + b_u + b_i + x_u . y_i`` and a log
variance from a linear head on ``x_u (+) y_i``; members are trained on the
Gaussian negative log-likelihood with hand-derived gradients.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import LogTable
from .optim import Adam

LOG_VAR_MIN, LOG_VAR_MAX = -10.0, 4.0
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class GPMMember:
    user_embeddings: np.ndarray  # [n_users, d]
    item_embeddings: np.ndarray  # [n_items, d]
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_bias: float
    w_var: np.ndarray  # [2d]
    b_var: float

    @property
    def d(self) -> int:
        return self.user_embeddings.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_embeddings.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[0]

    @classmethod
    def zeros(cls, n_users: int, n_items: int, d: int) -> "GPMMember":
        return cls(np.zeros((n_users, d)), np.zeros((n_items, d)), np.zeros(n_users),
                   np.zeros(n_items), 0.0, np.zeros(2 * d), 0.0)

    def params(self) -> dict[str, np.ndarray]:
        return {
            "user_embeddings": self.user_embeddings,
            "item_embeddings": self.item_embeddings,
            "user_bias": self.user_bias,
            "item_bias": self.item_bias,
            "global_bias": np.asarray(self.global_bias, dtype=float),
            "w_var": self.w_var,
            "b_var": np.asarray(self.b_var, dtype=float),
        }

    def copy(self) -> "GPMMember":
        return GPMMember(self.user_embeddings.copy(), self.item_embeddings.copy(),
                         self.user_bias.copy(), self.item_bias.copy(), float(self.global_bias),
                         self.w_var.copy(), float(self.b_var))

    def _raw_log_var(self, u, i) -> np.ndarray:
        d = self.d
        return (self.user_embeddings[u] @ self.w_var[:d]
                + self.item_embeddings[i] @ self.w_var[d:] + self.b_var)

    def predict_batch(self, u, i) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u)
        i = np.asarray(i)
        if u.size and (u.min() < 0 or u.max() >= self.n_users):
            raise IndexError("user id out of range")
        if i.size and (i.min() < 0 or i.max() >= self.n_items):
            raise IndexError("item id out of range")
        xu = self.user_embeddings[u]
        yi = self.item_embeddings[i]
        mu = self.global_bias + self.user_bias[u] + self.item_bias[i] + np.sum(xu * yi, axis=-1)
        return mu, np.clip(self._raw_log_var(u, i), LOG_VAR_MIN, LOG_VAR_MAX)

    def mean_matrix(self) -> np.ndarray:
        return (self.global_bias + self.user_bias[:, None] + self.item_bias[None, :]
                + self.user_embeddings @ self.item_embeddings.T)

    def log_var_matrix(self) -> np.ndarray:
        d = self.d
        raw = ((self.user_embeddings @ self.w_var[:d])[:, None]
               + (self.item_embeddings @ self.w_var[d:])[None, :] + self.b_var)
        return np.clip(raw, LOG_VAR_MIN, LOG_VAR_MAX)


def predict(member: GPMMember, user_id: int, item_id: int) -> tuple[float, float]:
    mu, lv = member.predict_batch(np.array([user_id]), np.array([item_id]))
    return float(mu[0]), float(lv[0])


def gpm_loss(member: GPMMember, users, items, targets, sample_weights=None,
             l2_reg: float = 0.0, return_grad: bool = False):
    """Weighted Gaussian NLL (constant dropped) plus L2 on the touched embeddings.

    loss = (1/B) sum_j w_j [ (y_j - mu_j)^2 / (2 s_j) + log(s_j) / 2 ]
           + l2_reg * (sum_{u in batch} |x_u|^2 + sum_{i in batch} |y_i|^2)

    With ``return_grad`` also returns a dict of gradients keyed like
    ``GPMMember.params()``.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    B = len(users)
    w = np.ones(B) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if B == 0:
        raise ValueError("empty batch")
    xu = member.user_embeddings[users]
    yi = member.item_embeddings[items]
    mu = (member.global_bias + member.user_bias[users] + member.item_bias[items]
          + np.sum(xu * yi, axis=1))
    raw = member._raw_log_var(users, items)
    s = np.clip(raw, LOG_VAR_MIN, LOG_VAR_MAX)
    inv_var = np.exp(-s)
    resid = targets - mu
    per = 0.5 * resid ** 2 * inv_var + 0.5 * s
    uu = np.unique(users)
    ii = np.unique(items)
    reg = l2_reg * (np.sum(member.user_embeddings[uu] ** 2) + np.sum(member.item_embeddings[ii] ** 2))
    loss = float(np.sum(w * per) / B + reg)
    if not return_grad:
        return loss

    c = w / B
    d_mu = c * (-resid * inv_var)
    inside = (raw > LOG_VAR_MIN) & (raw < LOG_VAR_MAX)
    d_s = c * (0.5 - 0.5 * resid ** 2 * inv_var) * inside
    d = member.d
    g_x = np.zeros_like(member.user_embeddings)
    g_y = np.zeros_like(member.item_embeddings)
    np.add.at(g_x, users, d_mu[:, None] * yi + d_s[:, None] * member.w_var[None, :d])
    np.add.at(g_y, items, d_mu[:, None] * xu + d_s[:, None] * member.w_var[None, d:])
    g_x[uu] += 2 * l2_reg * member.user_embeddings[uu]
    g_y[ii] += 2 * l2_reg * member.item_embeddings[ii]
    g_bu = np.bincount(users, weights=d_mu, minlength=member.n_users)
    g_bi = np.bincount(items, weights=d_mu, minlength=member.n_items)
    grads = {
        "user_embeddings": g_x,
        "item_embeddings": g_y,
        "user_bias": g_bu,
        "item_bias": g_bi,
        "global_bias": np.asarray(d_mu.sum()),
        "w_var": np.concatenate([d_s @ xu, d_s @ yi]),
        "b_var": np.asarray(d_s.sum()),
    }
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    d: int = 8
    K: int = 5
    learning_rate: float = 0.01
    l2_reg: float = 1e-4
    epochs: int = 20
    batch_size: int = 256
    ips: bool = False
    ips_clip: tuple[float, float] = (0.1, 10.0)
    seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.d < 1 or self.K < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("d, K, epochs and batch_size must be >= 1")
        lo, hi = self.ips_clip
        if not 0 < lo <= hi:
            raise ValueError("ips_clip must satisfy 0 < low <= high")


@dataclass
class GPMEnsemble:
    members: list[GPMMember]
    config: TrainConfig | None = None
    final_losses: list[float] = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        shapes = {(m.n_users, m.n_items, m.d) for m in self.members}
        if len(shapes) != 1:
            raise ValueError(f"members disagree on (n_users, n_items, d): {shapes}")

    @property
    def K(self) -> int:
        return len(self.members)

    @property
    def n_users(self) -> int:
        return self.members[0].n_users

    @property
    def n_items(self) -> int:
        return self.members[0].n_items

    def reward_matrix(self) -> np.ndarray:
        """r_hat for every (user, item): mean of member means."""
        if "reward" not in self._cache:
            self._cache["reward"] = np.mean([m.mean_matrix() for m in self.members], axis=0)
        return self._cache["reward"]

    def uncertainty_matrix(self) -> np.ndarray:
        """P_U for every (user, item): max of member variances."""
        if "unc" not in self._cache:
            self._cache["unc"] = np.exp(np.max([m.log_var_matrix() for m in self.members], axis=0))
        return self._cache["unc"]


def ensemble_reward(ensemble: GPMEnsemble, u: int, i: int) -> float:
    return float(np.mean([predict(m, u, i)[0] for m in ensemble.members]))


def uncertainty(ensemble: GPMEnsemble, u: int, i: int) -> float:
    return float(max(np.exp(predict(m, u, i)[1]) for m in ensemble.members))


def ips_weights(logs: LogTable, clip: tuple[float, float] = (0.1, 10.0)) -> np.ndarray:
    """Inverse empirical-exposure weight per record, normalised so that a
    uniformly exposed log gets weight 1, then clipped."""
    if not len(logs):
        raise ValueError("ips_weights needs a non-empty log")
    counts = logs.item_counts().astype(float)
    mean_count = counts[counts > 0].mean()
    w = mean_count / counts[logs.item_id]
    return np.clip(w, clip[0], clip[1])


def _init_member(n_users: int, n_items: int, cfg: TrainConfig, rng: np.random.Generator,
                 target_mean: float) -> GPMMember:
    m = GPMMember.zeros(n_users, n_items, cfg.d)
    m.user_embeddings[:] = rng.normal(0, cfg.init_scale, m.user_embeddings.shape)
    m.item_embeddings[:] = rng.normal(0, cfg.init_scale, m.item_embeddings.shape)
    m.global_bias = target_mean
    return m


def _train_member(logs: LogTable, cfg: TrainConfig, weights: np.ndarray | None,
                  seed: int) -> tuple[GPMMember, float]:
    rng = np.random.default_rng(seed)
    member = _init_member(logs.n_users, logs.n_items, cfg, rng, float(logs.reward.mean()))
    # scalars live in 0-d arrays during training so the optimiser can update in place
    params = member.params()
    params["global_bias"] = np.array(member.global_bias, dtype=float)
    params["b_var"] = np.array(member.b_var, dtype=float)
    opt = Adam(params, cfg.learning_rate)
    n = len(logs)
    epoch_loss = float("nan")
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            member.global_bias = float(params["global_bias"])
            member.b_var = float(params["b_var"])
            loss, grads = gpm_loss(member, logs.user_id[idx], logs.item_id[idx], logs.reward[idx],
                                   None if weights is None else weights[idx], cfg.l2_reg,
                                   return_grad=True)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"GPM loss became {loss}; try a smaller learning_rate (now {cfg.learning_rate})")
            opt.step(params, grads)
            total += loss * len(idx)
            seen += len(idx)
        epoch_loss = total / seen
    member.global_bias = float(params["global_bias"])
    member.b_var = float(params["b_var"])
    return member, epoch_loss


def train_ensemble(logs: LogTable, cfg: TrainConfig) -> GPMEnsemble:
    """Train K members with seeds ``cfg.seed + k``; members differ only in
    initialisation and shuffle order."""
    if not len(logs):
        raise ValueError("cannot train on an empty log")
    weights = ips_weights(logs, cfg.ips_clip) if cfg.ips else None
    members, losses = [], []
    for k in range(cfg.K):
        m, loss = _train_member(logs, cfg, weights, cfg.seed + k)
        members.append(m)
        losses.append(loss)
    return GPMEnsemble(members, cfg, losses)


def save_ensemble(ens: GPMEnsemble, path: str | Path, **extra) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": _config_to_json(ens.config),
        "final_losses": ens.final_losses,
        "members": [{k: np.asarray(v).tolist() for k, v in m.params().items()}
                    for m in ens.members],
        **extra,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_ensemble(path: str | Path) -> GPMEnsemble:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    members = []
    for raw in payload["members"]:
        x = np.asarray(raw["user_embeddings"], dtype=float)
        y = np.asarray(raw["item_embeddings"], dtype=float)
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
            raise ValueError("embedding matrices have inconsistent shapes")
        d = x.shape[1]
        w_var = np.asarray(raw["w_var"], dtype=float)
        bu = np.asarray(raw["user_bias"], dtype=float)
        bi = np.asarray(raw["item_bias"], dtype=float)
        if w_var.shape != (2 * d,) or bu.shape != (x.shape[0],) or bi.shape != (y.shape[0],):
            raise ValueError("parameter dimensions do not match embeddings")
        members.append(GPMMember(x, y, bu, bi, float(raw["global_bias"]), w_var,
                                 float(raw["b_var"])))
    cfg = payload.get("config")
    return GPMEnsemble(members, _config_from_json(cfg) if cfg else None,
                       list(payload.get("final_losses", [])))


def _config_to_json(cfg: TrainConfig | None):
    if cfg is None:
        return None
    d = asdict(cfg)
    d["ips_clip"] = list(cfg.ips_clip)
    return d


def _config_from_json(d: dict) -> TrainConfig:
    d = dict(d)
    d["ips_clip"] = tuple(d["ips_clip"])
    return TrainConfig(**d)
