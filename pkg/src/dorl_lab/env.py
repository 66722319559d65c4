"""Ground-truth interactive environment with the no-repeat and category quit rules."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

if TYPE_CHECKING:
    from .data import WorldSpec


@dataclass(frozen=True)
class QuitRule:
    """User quits when the current category already occurs more than
    ``tolerance`` times among the previous ``window`` recommendations.
    ``window == 0`` disables the rule."""

    window: int = 4
    tolerance: int = 0

    def __post_init__(self):
        if self.window < 0 or self.tolerance < 0:
            raise ValueError("quit rule window and tolerance must be >= 0")


@dataclass(frozen=True)
class EnvState:
    user_id: int
    history: tuple[tuple[int, float, int], ...] = ()
    terminated: bool = False
    termination_reason: str = "none"

    @property
    def items(self) -> list[int]:
        return [h[0] for h in self.history]

    @property
    def categories(self) -> list[int]:
        return [h[2] for h in self.history]

    @property
    def episode_return(self) -> float:
        return float(sum(h[1] for h in self.history))


class EnvError(RuntimeError):
    pass


def reset(world: "WorldSpec", user_id: int) -> EnvState:
    if not 0 <= user_id < world.n_users:
        raise EnvError(f"user {user_id} out of range [0, {world.n_users})")
    return EnvState(int(user_id))


def should_quit(recent_categories: Sequence[int], current_category: int, rule: QuitRule) -> bool:
    if rule.window == 0:
        return False
    window = list(recent_categories)[-rule.window:]
    return window.count(current_category) > rule.tolerance


def step(world: "WorldSpec", state: EnvState, item_id: int):
    """Serve one recommendation. Returns (state, reward, done, reason)."""
    if state.terminated:
        raise EnvError("episode already terminated")
    if not 0 <= item_id < world.n_items:
        raise EnvError(f"item {item_id} out of range [0, {world.n_items})")
    item_id = int(item_id)
    if any(h[0] == item_id for h in state.history):
        raise EnvError(f"item {item_id} already recommended in this episode")
    reward = float(world.preference[state.user_id, item_id])
    cat = int(world.item_category[item_id])
    quit_now = should_quit(state.categories, cat, world.quit_rule)
    history = state.history + ((item_id, reward, cat),)
    if quit_now:
        reason = "quit_rule"
    elif len(history) >= world.max_rounds:
        reason = "max_rounds"
    else:
        reason = "none"
    done = reason != "none"
    return EnvState(state.user_id, history, done, reason), reward, done, reason
