"""Gradient-alignment rewards and their importance-weighted moving average."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALPHA_FLOOR = 1e-3


def alignment(grads: np.ndarray) -> np.ndarray:
    """Per-domain alignment ``W_i = <g_i, sum_j g_j>`` for a (k, d) stack of gradients."""
    lengths = sorted({len(x) for x in grads})
    if len(lengths) > 1:
        raise ValueError(f"gradient slices must share one length, got lengths {lengths}")
    g = np.asarray(grads, dtype=np.float64)
    g_sum = g.sum(axis=0)
    return g @ g_sum


def smooth_update(r_prev: np.ndarray, W: np.ndarray, alpha_prev: np.ndarray, xi: float,
                  alpha_floor: float = ALPHA_FLOOR) -> np.ndarray:
    """``r_i = xi * r_prev_i + (1 - xi) * W_i / max(alpha_prev_i, floor)``."""
    if not 0.0 <= xi < 1.0:
        raise ValueError(f"smoothing coefficient must lie in [0, 1), got {xi}")
    denom = np.maximum(np.asarray(alpha_prev, dtype=np.float64), alpha_floor)
    return xi * np.asarray(r_prev, dtype=np.float64) + (1.0 - xi) * np.asarray(W) / denom


@dataclass
class RunningStandardizer:
    """Welford running mean/variance; ``transform`` standardizes with the stats so far."""

    count: int = 0
    mean: np.ndarray | float = 0.0
    m2: np.ndarray | float = 0.0
    eps: float = 1e-8

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    @property
    def std(self):
        if self.count < 2:
            return np.ones_like(np.asarray(self.mean, dtype=np.float64))
        return np.sqrt(np.asarray(self.m2) / (self.count - 1)) + self.eps

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass
class RewardTracker:
    """Turns raw alignment scores into the scalar/vector reward stored for the critic.

    ``source`` picks ``"smoothed"`` (moving average of importance-weighted
    scores) or ``"raw"`` (``W`` as-is). ``reduction`` maps the per-domain
    vector to what the critic regresses on: ``"sum"``, ``"weighted"``
    (``sum_i alpha_i r_i`` with the sampling weights in force) or ``"vector"``
    for a k-headed critic.
    """

    k: int
    xi: float = 0.9
    source: str = "smoothed"
    reduction: str = "sum"
    standardize: bool = True
    alpha_floor: float = ALPHA_FLOOR
    r_hat: np.ndarray = field(init=False)
    stats: RunningStandardizer = field(default_factory=RunningStandardizer)

    def __post_init__(self):
        if self.source not in ("smoothed", "raw"):
            raise ValueError(f"unknown reward source {self.source!r}")
        if self.reduction not in ("sum", "weighted", "vector"):
            raise ValueError(f"unknown reward reduction {self.reduction!r}")
        if not 0.0 <= self.xi < 1.0:
            raise ValueError(f"smoothing coefficient must lie in [0, 1), got {self.xi}")
        self.r_hat = np.zeros(self.k)

    def per_domain(self, W: np.ndarray, alpha_sampled: np.ndarray) -> np.ndarray:
        """Advance the smoothed state and return the per-domain reward vector."""
        self.r_hat = smooth_update(self.r_hat, W, alpha_sampled, self.xi, self.alpha_floor)
        if self.source == "raw":
            return np.asarray(W, dtype=np.float64).copy()
        return self.r_hat.copy()

    def reduce(self, r: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        if self.reduction == "sum":
            return np.array([r.sum()])
        if self.reduction == "weighted":
            return np.array([float(np.dot(alpha, r))])
        return r.copy()

    def critic_reward(self, r: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """Reduced, optionally standardized reward; updates the running stats."""
        reduced = self.reduce(r, alpha)
        if not np.all(np.isfinite(reduced)):
            raise FloatingPointError(f"non-finite reward {reduced}")
        if not self.standardize:
            return reduced
        self.stats.update(reduced)
        return np.asarray(self.stats.transform(reduced), dtype=np.float64).reshape(-1)

    @property
    def out_dim(self) -> int:
        return self.k if self.reduction == "vector" else 1

