"""Exact computations on small finite MDPs.

Rewards are finite-support distributions per (s, a), so every expectation is
a finite sum. A reward-factored MDP additionally maps each reward outcome to
a deterministic next state, s' = f(s, a, r).

Returns are normalised by (1 - gamma) throughout, matching the occupancy
measure rho(s, a) = (1 - gamma) pi(a|s) sum_t gamma^t P_t(s).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class ConsistencyError(RuntimeError):
    """Two independent routes to the same quantity disagree."""


@dataclass(frozen=True, eq=False)
class FiniteMDP:
    transition: np.ndarray  # [S, A, S]
    reward_values: np.ndarray  # [S, A, K]
    reward_probs: np.ndarray  # [S, A, K]
    gamma: float
    initial_dist: np.ndarray  # [S]
    next_state: np.ndarray | None = None  # [S, A, K] for reward-factored MDPs

    def __post_init__(self):
        S, A, S2 = self.transition.shape
        if S != S2:
            raise ValueError("transition must be [S, A, S]")
        if self.reward_values.shape[:2] != (S, A) or self.reward_values.shape != self.reward_probs.shape:
            raise ValueError("reward arrays must be [S, A, K]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if (self.transition < 0).any() or np.abs(self.transition.sum(-1) - 1).max() > 1e-12:
            raise ValueError("transition rows must be distributions (tolerance 1e-12)")
        if (self.reward_probs < 0).any() or np.abs(self.reward_probs.sum(-1) - 1).max() > 1e-12:
            raise ValueError("reward probabilities must sum to 1")
        if self.initial_dist.shape != (S,) or abs(self.initial_dist.sum() - 1) > 1e-12:
            raise ValueError("initial_dist must be a distribution over states")
        if self.next_state is not None:
            if self.next_state.shape != self.reward_values.shape:
                raise ValueError("next_state must be [S, A, K]")
            derived = _factored_transition(self.next_state, self.reward_probs, S)
            if np.abs(derived - self.transition).max() > 1e-12:
                raise ValueError("transition inconsistent with next_state map")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def mean_reward(self) -> np.ndarray:
        return (self.reward_values * self.reward_probs).sum(-1)

    @property
    def reward_factored(self) -> bool:
        return self.next_state is not None

    def with_reward(self, mean_reward: np.ndarray) -> "FiniteMDP":
        """Same dynamics, deterministic reward table."""
        S, A = mean_reward.shape
        if self.next_state is not None:
            raise ValueError("cannot replace rewards of a reward-factored MDP")
        return FiniteMDP(self.transition, mean_reward[..., None].astype(float),
                         np.ones((S, A, 1)), self.gamma, self.initial_dist)


def _factored_transition(next_state: np.ndarray, probs: np.ndarray, S: int) -> np.ndarray:
    T = np.zeros(next_state.shape[:2] + (S,))
    s_idx, a_idx, _ = np.indices(next_state.shape)
    np.add.at(T, (s_idx, a_idx, next_state), probs)
    return T


def factored_mdp(next_state, reward_values, reward_probs, gamma, initial_dist) -> FiniteMDP:
    next_state = np.asarray(next_state, dtype=np.int64)
    probs = np.asarray(reward_probs, dtype=float)
    S = len(initial_dist)
    return FiniteMDP(_factored_transition(next_state, probs, S),
                     np.asarray(reward_values, dtype=float), probs, float(gamma),
                     np.asarray(initial_dist, dtype=float), next_state)


def check_policy(M: FiniteMDP, pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (M.n_states, M.n_actions):
        raise ValueError(f"policy shape {pi.shape} != ({M.n_states}, {M.n_actions})")
    if (pi < 0).any() or np.abs(pi.sum(1) - 1).max() > 1e-12:
        raise ValueError("policy rows must be distributions")
    return pi


def value_function(M: FiniteMDP, pi) -> np.ndarray:
    """Exact V^pi from (I - gamma P_pi) V = r_pi."""
    pi = check_policy(M, pi)
    P = np.einsum("sa,sat->st", pi, M.transition)
    r = (pi * M.mean_reward).sum(1)
    A = np.eye(M.n_states) - M.gamma * P
    V = np.linalg.solve(A, r)
    resid = np.abs(A @ V - r).max()
    if resid > 1e-10 * max(1.0, np.abs(r).max()):
        raise ConsistencyError(f"value solve residual {resid:.3e}")
    return V


def occupancy(M: FiniteMDP, pi) -> np.ndarray:
    """Normalised discounted state-action occupancy rho [S, A]."""
    pi = check_policy(M, pi)
    P = np.einsum("sa,sat->st", pi, M.transition)
    d = np.linalg.solve(np.eye(M.n_states) - M.gamma * P.T, (1 - M.gamma) * M.initial_dist)
    rho = d[:, None] * pi
    if abs(rho.sum() - 1) > 1e-10:
        raise ConsistencyError(f"occupancy sums to {rho.sum():.15f}")
    return rho


def eta(M: FiniteMDP, pi) -> float:
    """Normalised return, computed via V and via rho and cross-checked."""
    via_v = (1 - M.gamma) * float(M.initial_dist @ value_function(M, pi))
    via_rho = float((occupancy(M, pi) * M.mean_reward).sum())
    if abs(via_v - via_rho) > 1e-8:
        raise ConsistencyError(f"eta routes disagree: {via_v} vs {via_rho}")
    return via_rho


def _check_pair(M: FiniteMDP, M_hat: FiniteMDP) -> None:
    if (M.n_states, M.n_actions) != (M_hat.n_states, M_hat.n_actions) or M.gamma != M_hat.gamma:
        raise ValueError("MDPs must share S, A and gamma")


def mismatch_G_table(M: FiniteMDP, M_hat: FiniteMDP, pi) -> np.ndarray:
    """G[s, a] = E_hat[gamma V_M(s') + r] - E[gamma V_M(s') + r], V from the true MDP."""
    _check_pair(M, M_hat)
    V = value_function(M, pi)
    return ((M_hat.mean_reward + M.gamma * M_hat.transition @ V)
            - (M.mean_reward + M.gamma * M.transition @ V))


def mismatch_G(M: FiniteMDP, M_hat: FiniteMDP, pi, s: int, a: int) -> float:
    return float(mismatch_G_table(M, M_hat, pi)[s, a])


@dataclass(frozen=True)
class GapIdentityCheck:
    lhs: float
    rhs: float
    abs_diff: float


def verify_lemma1(M: FiniteMDP, M_hat: FiniteMDP, pi) -> GapIdentityCheck:
    """E_{rho on estimated dynamics}[G] against eta(M_hat) - eta(M)."""
    lhs = float((occupancy(M_hat, pi) * mismatch_G_table(M, M_hat, pi)).sum())
    rhs = eta(M_hat, pi) - eta(M, pi)
    return GapIdentityCheck(lhs, rhs, abs(lhs - rhs))


@dataclass(frozen=True)
class BoundCheck:
    abs_G: float
    gamma_dV: float
    d1: float
    holds: bool


def bound_decomposition(M: FiniteMDP, M_hat: FiniteMDP, pi, s: int, a: int,
                        tol: float = 1e-12) -> BoundCheck:
    """|G| <= gamma d_V + d_1 with d_1 the mean-reward gap and d_V the gap in
    E V_M(f(s, a, r)) between estimated and true reward distributions."""
    if not (M.reward_factored and M_hat.reward_factored):
        raise ValueError("bound decomposition needs reward-factored MDPs")
    _check_pair(M, M_hat)
    V = value_function(M, pi)
    G = mismatch_G(M, M_hat, pi, s, a)
    d1 = abs(float(M_hat.mean_reward[s, a] - M.mean_reward[s, a]))
    ev_hat = float(M_hat.reward_probs[s, a] @ V[M_hat.next_state[s, a]])
    ev = float(M.reward_probs[s, a] @ V[M.next_state[s, a]])
    gdv = M.gamma * abs(ev_hat - ev)
    return BoundCheck(abs(G), gdv, d1, abs(G) <= gdv + d1 + tol)


def deterministic_policies(S: int, A: int):
    for choice in itertools.product(range(A), repeat=S):
        pi = np.zeros((S, A))
        pi[np.arange(S), choice] = 1.0
        yield pi


@dataclass
class PenalisedBoundReport:
    hypothesis_ok: bool
    violations: list[int] = field(default_factory=list)
    eta_true_pi_hat: float = float("nan")
    lower_bound: float = float("nan")
    holds: bool | None = None
    slack: float = float("nan")

    @property
    def skipped(self) -> bool:
        return self.holds is None


def verify_theorem1(M: FiniteMDP, M_hat: FiniteMDP, penalty: np.ndarray, lam: float,
                    extra_policies=(), tol: float = 1e-10) -> PenalisedBoundReport:
    """Check eta_M(pi_hat) >= sup_pi {eta_M(pi) - 2 lam eps_p(pi)}.

    pi_hat maximises the penalised return in M_hat with reward r_hat - lam p;
    an optimal deterministic policy exists, so enumerating them is exact. The
    supremum and the penalty hypothesis are checked over every deterministic
    policy plus ``extra_policies``.
    """
    _check_pair(M, M_hat)
    if M.n_actions ** M.n_states > 4096:
        raise ValueError("too many deterministic policies to enumerate")
    penalty = np.asarray(penalty, dtype=float)
    det = list(deterministic_policies(M.n_states, M.n_actions))
    candidates = det + [check_policy(M, p) for p in extra_policies]
    eta_true, eps = [], []
    violations = []
    for j, pi in enumerate(candidates):
        rho_hat = occupancy(M_hat, pi)
        e_p = float((rho_hat * penalty).sum())
        et = eta(M, pi)
        if lam * e_p < abs(eta(M_hat, pi) - et) - tol:
            violations.append(j)
        eta_true.append(et)
        eps.append(e_p)
    if violations:
        return PenalisedBoundReport(False, violations)
    penalised = _penalised(M_hat, penalty, lam)
    best = max(range(len(det)), key=lambda j: (eta(penalised, det[j]), -j))
    lower = max(et - 2 * lam * e for et, e in zip(eta_true, eps))
    got = eta_true[best]
    return PenalisedBoundReport(True, [], got, lower, got >= lower - tol, got - lower)


def _penalised(M_hat: FiniteMDP, penalty: np.ndarray, lam: float) -> FiniteMDP:
    vals = M_hat.reward_values - lam * penalty[..., None]
    return FiniteMDP(M_hat.transition, vals, M_hat.reward_probs, M_hat.gamma,
                     M_hat.initial_dist, M_hat.next_state)


def mismatch_penalty(M: FiniteMDP, M_hat: FiniteMDP, margin: float = 0.0) -> np.ndarray:
    """max over deterministic policies of |G^pi(s, a)|, plus ``margin``.

    The set of value functions is contained in the convex hull of the
    deterministic ones and |G| is convex in V, so this bounds |G^pi| for
    every stationary policy.
    """
    tabs = [np.abs(mismatch_G_table(M, M_hat, pi))
            for pi in deterministic_policies(M.n_states, M.n_actions)]
    return np.max(tabs, axis=0) + margin


# --------------------------------------------------------------------------- random instances


def random_policy(S: int, A: int, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(A), size=S)


def random_mdp(S: int, A: int, gamma: float, rng: np.random.Generator,
               n_outcomes: int = 2) -> FiniteMDP:
    T = rng.dirichlet(np.ones(S), size=(S, A))
    vals = rng.uniform(0, 1, size=(S, A, n_outcomes))
    probs = rng.dirichlet(np.ones(n_outcomes), size=(S, A))
    return FiniteMDP(T, vals, probs, gamma, rng.dirichlet(np.ones(S)))


def perturb_mdp(M: FiniteMDP, rng: np.random.Generator, scale: float = 0.3,
                transitions: bool = True) -> FiniteMDP:
    """Estimated-model stand-in: mixes transitions and reward laws with noise."""
    S, A = M.n_states, M.n_actions
    K = M.reward_values.shape[-1]
    T = M.transition
    if transitions:
        T = (1 - scale) * T + scale * rng.dirichlet(np.ones(S), size=(S, A))
    probs = (1 - scale) * M.reward_probs + scale * rng.dirichlet(np.ones(K), size=(S, A))
    vals = np.clip(M.reward_values + rng.normal(0, scale, size=M.reward_values.shape), 0, 1)
    return FiniteMDP(T, vals, probs, M.gamma, M.initial_dist)


def random_factored_pair(S: int, A: int, gamma: float, rng: np.random.Generator,
                         n_outcomes: int = 3) -> tuple[FiniteMDP, FiniteMDP]:
    """True/estimated reward-factored MDPs sharing the outcome alphabet and f.

    Each (s, a) has ``n_outcomes`` reward levels; outcome k leads to a fixed
    next state. The estimated MDP only changes the outcome probabilities.
    """
    levels = np.sort(rng.uniform(0, 1, size=(S, A, n_outcomes)), axis=-1)
    nxt = rng.integers(S, size=(S, A, n_outcomes))
    p = rng.dirichlet(np.ones(n_outcomes), size=(S, A))
    p_hat = rng.dirichlet(np.ones(n_outcomes), size=(S, A))
    mu0 = rng.dirichlet(np.ones(S))
    return (factored_mdp(nxt, levels, p, gamma, mu0), factored_mdp(nxt, levels, p_hat, gamma, mu0))
