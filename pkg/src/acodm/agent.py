"""DDPG agent that outputs domain weights on the simplex."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .nn import MLP
from .params import AdamState, ParamSet, adam_step, clip_grad_norm
from .tensor import Tensor, concat, mse, no_grad, softmax

log = logging.getLogger(__name__)


class AgentDivergence(RuntimeError):
    pass


class ActorNet:
    """Fully connected trunk with layer norm + ReLU and a softmax head over k domains."""

    kind = "actor"

    def __init__(self, state_dim: int, k: int, hidden: int, depth: int, rng: np.random.Generator):
        self.state_dim, self.k, self.hidden, self.depth = state_dim, k, hidden, depth
        self.out_dim = k
        self.params = ParamSet()
        self.net = MLP(self.params, "actor", state_dim, hidden, k, depth, rng)

    def logits(self, s: Tensor) -> Tensor:
        return self.net(s)

    def __call__(self, s: Tensor) -> Tensor:
        return softmax(self.net(s), axis=-1)


class CriticNet:
    """Same trunk over ``concat(state, action)``; identity head of size ``out_dim``."""

    kind = "critic"

    def __init__(self, state_dim: int, k: int, hidden: int, depth: int,
                 rng: np.random.Generator, out_dim: int = 1):
        self.state_dim, self.k, self.hidden, self.depth = state_dim, k, hidden, depth
        self.out_dim = out_dim
        self.params = ParamSet()
        self.net = MLP(self.params, "critic", state_dim + k, hidden, out_dim, depth, rng)

    def __call__(self, s: Tensor, a: Tensor) -> Tensor:
        return self.net(concat([s, a], axis=1))


@dataclass
class TransitionBatch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray

    def __len__(self) -> int:
        return len(self.s)


class ReplayBuffer:
    """Bounded FIFO of transitions stored in preallocated ring arrays."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, reward_dim: int,
                 rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros((capacity, reward_dim))
        self.s_next = np.zeros((capacity, state_dim))
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s_next) -> None:
        i = self.ptr
        self.s[i], self.a[i], self.r[i], self.s_next[i] = s, a, np.reshape(r, -1), s_next
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def chronological(self) -> np.ndarray:
        """Indices of stored transitions, oldest first."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.ptr) % self.capacity

    def take(self, idx: np.ndarray) -> TransitionBatch:
        return TransitionBatch(self.s[idx].copy(), self.a[idx].copy(), self.r[idx].copy(),
                               self.s_next[idx].copy())

    def sample(self, n: int) -> TransitionBatch:
        """Uniform minibatch without replacement; the whole buffer if it holds <= n."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if self.size <= n:
            idx = self.chronological()
        else:
            idx = self.rng.choice(self.size, size=n, replace=False)
        return self.take(idx)


@dataclass
class AgentConfig:
    hidden: int = 1024
    depth: int = 6
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    capacity: int | None = None  # None -> 10 * T
    lr_max: float = 0.01
    lr_min: float = 0.001
    noise_start: float = 1.0
    noise_end: float = 0.1
    grad_clip: float = 1.0
    warmup_fit_steps: int = 200

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.batch_size < 1 or self.hidden < 1 or self.depth < 1:
            raise ValueError("batch_size, hidden and depth must be positive")


def soft_update(online: ParamSet, target: ParamSet, tau: float) -> None:
    """``target <- tau * online + (1 - tau) * target`` elementwise."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    for (name, o), (tname, t) in zip(online, target):
        if name != tname or o.shape != t.shape:
            raise ValueError(f"parameter mismatch: {name}{o.shape} vs {tname}{t.shape}")
        t.data = tau * o.data + (1.0 - tau) * t.data


def _check_finite(params: ParamSet, what: str) -> None:
    for name, t in params:
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise AgentDivergence(f"non-finite {what} gradient in {name}")


class DDPGAgent:
    def __init__(self, state_dim: int, k: int, config: AgentConfig, seed: int,
                 capacity: int, reward_dim: int = 1):
        config.validate()
        self.config = config
        self.k = k
        self.state_dim = state_dim
        self.reward_dim = reward_dim
        seqs = np.random.SeedSequence(seed).spawn(4)
        actor_rng = np.random.default_rng(seqs[0])
        critic_rng = np.random.default_rng(seqs[1])
        self.noise_rng = np.random.default_rng(seqs[2])
        self.actor = ActorNet(state_dim, k, config.hidden, config.depth, actor_rng)
        self.critic = CriticNet(state_dim, k, config.hidden, config.depth, critic_rng, reward_dim)
        # target copies start identical to the online nets
        self.actor_target = ActorNet(state_dim, k, config.hidden, config.depth, np.random.default_rng(0))
        self.critic_target = CriticNet(state_dim, k, config.hidden, config.depth,
                                       np.random.default_rng(0), reward_dim)
        self.actor_target.params.copy_from(self.actor.params)
        self.critic_target.params.copy_from(self.critic.params)
        self.actor_opt = AdamState.for_params(self.actor.params)
        self.critic_opt = AdamState.for_params(self.critic.params)
        self.buffer = ReplayBuffer(capacity, state_dim, k, reward_dim, np.random.default_rng(seqs[3]))
        self.clip_events = 0

    # -- acting ------------------------------------------------------------

    def act(self, state: np.ndarray, noise_scale: float = 0.0,
            rng: np.random.Generator | None = None) -> np.ndarray:
        """Domain weights from the online actor; Gaussian noise goes on the logits."""
        s = np.asarray(state, dtype=np.float64).reshape(1, -1)
        if not np.all(np.isfinite(s)):
            raise ValueError("state contains non-finite entries")
        with no_grad():
            logits = self.actor.logits(Tensor(s)).data[0]
        if noise_scale > 0:
            rng = rng if rng is not None else self.noise_rng
            logits = logits + noise_scale * rng.standard_normal(self.k)
        z = logits - logits.max()
        e = np.exp(z)
        return e / e.sum()

    # -- updates -----------------------------------------------------------

    def td_targets(self, batch: TransitionBatch, gamma: float | None = None) -> np.ndarray:
        gamma = self.config.gamma if gamma is None else gamma
        with no_grad():
            s2 = Tensor(batch.s_next)
            q_next = self.critic_target(s2, self.actor_target(s2)).data
        return batch.r + gamma * q_next

    def _step(self, params: ParamSet, opt: AdamState, lr: float, what: str) -> None:
        _check_finite(params, what)
        if self.config.grad_clip and clip_grad_norm(params, self.config.grad_clip):
            self.clip_events += 1
            log.debug("%s gradient clipped to norm %.3g", what, self.config.grad_clip)
        adam_step(params, opt, lr)
        params.zero_grad()

    def critic_update(self, batch: TransitionBatch, targets: np.ndarray, lr: float) -> float:
        params = self.critic.params
        params.zero_grad()
        q = self.critic(Tensor(batch.s), Tensor(batch.a))
        loss = mse(q, np.asarray(targets).reshape(q.shape))
        value = loss.item()
        if not math.isfinite(value):
            raise AgentDivergence(f"non-finite critic loss {value}")
        loss.backward()
        self._step(params, self.critic_opt, lr, "critic")
        return value

    def actor_update(self, batch: TransitionBatch, lr: float) -> float:
        """Ascend Q(s, mu(s)) through one backward pass with the critic frozen."""
        frozen = self.critic.params.tensors()
        for t in frozen:
            t.requires_grad = False
        try:
            self.actor.params.zero_grad()
            s = Tensor(batch.s)
            q = self.critic(s, self.actor(s))
            objective = q.sum(axis=1).mean()
            value = objective.item()
            (-objective).backward()
        finally:
            for t in frozen:
                t.requires_grad = True
        self._step(self.actor.params, self.actor_opt, lr, "actor")
        return value

    def update_targets(self, tau: float | None = None) -> None:
        tau = self.config.tau if tau is None else tau
        soft_update(self.actor.params, self.actor_target.params, tau)
        soft_update(self.critic.params, self.critic_target.params, tau)

    def train_step(self, lr: float) -> tuple[float, float]:
        """Sample N tuples, fit the critic to TD targets, step the actor, blend targets."""
        batch = self.buffer.sample(self.config.batch_size)
        y = self.td_targets(batch)
        critic_loss = self.critic_update(batch, y, lr)
        q_mean = self.actor_update(batch, lr)
        self.update_targets()
        return critic_loss, q_mean

    def warmup_fit(self, gamma: float | None = None, steps: int | None = None,
                   lr: float | None = None) -> tuple[float, float]:
        """Regress the actor onto logged warm-up weights and the critic onto (1 + gamma) r.

        Minibatches of ``batch_size`` are drawn from the buffer; if the buffer
        is smaller than that every step is full-batch. Target networks are
        re-synchronised afterwards. Returns the final (actor, critic) MSE.
        """
        if len(self.buffer) == 0:
            raise ValueError("warmup_fit needs a populated replay buffer")
        gamma = self.config.gamma if gamma is None else gamma
        steps = self.config.warmup_fit_steps if steps is None else steps
        lr = self.config.lr_max if lr is None else lr
        actor_loss = critic_loss = float("nan")
        for _ in range(steps):
            batch = self.buffer.sample(self.config.batch_size)
            self.actor.params.zero_grad()
            loss_a = mse(self.actor(Tensor(batch.s)), batch.a)
            actor_loss = loss_a.item()
            loss_a.backward()
            self._step(self.actor.params, self.actor_opt, lr, "actor")
            critic_loss = self.critic_update(batch, (1.0 + gamma) * batch.r, lr)
        self.actor_target.params.copy_from(self.actor.params)
        self.critic_target.params.copy_from(self.critic.params)
        return actor_loss, critic_loss


def noise_scale(t: int, T: int, start: float, end: float) -> float:
    """Linear decay from ``start`` at step 0 to ``end`` at step T."""
    if T <= 0:
        return end
    frac = min(max(t / T, 0.0), 1.0)
    return start + (end - start) * frac
