"""Static domain weights and an EXP3 bandit mixer (ODM-style)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import check_simplex


@dataclass
class StaticPolicy:
    weights: np.ndarray

    def __post_init__(self):
        self.weights = check_simplex(self.weights).copy()

    @classmethod
    def uniform(cls, k: int) -> StaticPolicy:
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def corpus_prior(cls, sizes) -> StaticPolicy:
        """Weights proportional to domain sizes (the analogue of a corpus's natural mix)."""
        n = np.asarray(sizes, dtype=np.float64)
        return cls(n / n.sum())

    def __call__(self, *_):
        return self.weights.copy()


@dataclass
class Exp3State:
    """Multiplicative weights over k arms.

    ``lr`` is the exponential learning rate and ``explore`` the uniform
    mixing floor. ``reward_avg`` is an exponential moving average of the
    importance-weighted rewards, kept for logging.
    """

    k: int
    lr: float = 0.01
    explore: float = 0.1
    reward_clip: float | None = None
    smoothing: float = 0.9
    w: np.ndarray = field(default=None)
    reward_avg: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.w is None:
            self.w = np.ones(self.k)
        if self.reward_avg is None:
            self.reward_avg = np.zeros(self.k)
        if not 0.0 <= self.explore <= 1.0:
            raise ValueError(f"exploration floor must lie in [0, 1], got {self.explore}")


def exp3_policy(state: Exp3State) -> np.ndarray:
    w = state.w
    return (1.0 - state.explore) * w / w.sum() + state.explore / state.k


def exp3_update(state: Exp3State, losses, policy, sampled=None) -> Exp3State:
    """Reward each sampled arm with its (clipped) loss divided by its play probability.

    ``sampled`` marks the arms that received data this step; by default every
    arm counts as sampled. Weights are rescaled by their maximum once they
    grow large, which leaves the mixture unchanged.
    """
    losses = np.asarray(losses, dtype=np.float64)
    pi = np.asarray(policy, dtype=np.float64)
    if not np.all(np.isfinite(losses)):
        raise ValueError(f"losses must be finite, got {losses}")
    mask = np.ones(state.k, dtype=bool) if sampled is None else np.asarray(sampled, dtype=bool)
    if np.any(pi[mask] <= 0):
        raise ValueError("a sampled arm has zero play probability")
    r = losses if state.reward_clip is None else np.clip(losses, 0.0, state.reward_clip)
    r_hat = np.zeros(state.k)
    r_hat[mask] = r[mask] / pi[mask]
    w = state.w * np.exp(state.lr * r_hat)
    if w.max() > 1e100:
        w = w / w.max()
    return Exp3State(
        k=state.k, lr=state.lr, explore=state.explore, reward_clip=state.reward_clip,
        smoothing=state.smoothing, w=w,
        reward_avg=state.smoothing * state.reward_avg + (1.0 - state.smoothing) * r_hat,
    )
