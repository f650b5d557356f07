"""Tiny autoregressive LM used as the data-mixing environment.

The model is an MLP language model: token embeddings of the last
``context`` tokens are concatenated and pushed through ``n_layers`` blocks
(dense -> layer norm -> ReLU) and a linear output head over the vocabulary.
Block ``i`` registers ``block{i}.dense.weight``; reward and state layer
indices refer to these matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import DomainCorpus, check_simplex, sample_batch, validation_loss_per_domain
from .nn import LayerNorm, Linear
from .params import AdamState, ParamSet, adam_step, sgd_step
from .tensor import Tensor, cross_entropy, embedding, no_grad


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TinyLMConfig:
    vocab_size: int = 256
    embed_dim: int = 16
    n_layers: int = 4
    hidden_dim: int = 64
    seq_len: int = 64
    context: int = 4
    reward_layer_indices: list[int] = field(default_factory=lambda: [3])
    state_layer_indices: list[int] = field(default_factory=lambda: [0, 2])

    def validate(self) -> None:
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if not self.reward_layer_indices:
            raise ValueError("at least one reward layer is required")
        for name in ("reward_layer_indices", "state_layer_indices"):
            bad = [i for i in getattr(self, name) if not 0 <= i < self.n_layers]
            if bad:
                raise ValueError(f"{name} {bad} out of range for n_layers={self.n_layers}")
        if self.context < 1:
            raise ValueError("context must be >= 1")

    @property
    def reward_mask(self) -> list[str]:
        return [f"block{i}.dense.weight" for i in self.reward_layer_indices]

    @property
    def state_layers(self) -> list[str]:
        return [f"block{i}.dense.weight" for i in self.state_layer_indices]


class TinyLM:
    def __init__(self, config: TinyLMConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.params = ParamSet()
        v, e, h = config.vocab_size, config.embed_dim, config.hidden_dim
        # row v is the left-padding token
        self.embed = self.params.add("embed.weight", Tensor(rng.normal(0.0, 1.0, size=(v + 1, e))))
        self.blocks = []
        width = config.context * e
        for i in range(config.n_layers):
            dense = Linear(self.params, f"block{i}.dense", width, h, rng)
            ln = LayerNorm(self.params, f"block{i}.ln", h)
            self.blocks.append((dense, ln))
            width = h
        self.head = Linear(self.params, "head", width, v, rng, init_scale=0.1)

    def windows(self, tokens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Context index windows (N, context) and next-token targets (N,)."""
        tokens = np.asarray(tokens)
        n, length = tokens.shape
        c = self.config.context
        pad = np.full((n, c - 1), self.config.vocab_size, dtype=tokens.dtype)
        padded = np.concatenate([pad, tokens[:, :-1]], axis=1)
        win = sliding_window_view(padded, c, axis=1)
        return win.reshape(-1, c), tokens[:, 1:].reshape(-1)

    def logits(self, idx: np.ndarray) -> Tensor:
        n = idx.shape[0]
        x = embedding(self.embed, idx).reshape(n, -1)
        for dense, ln in self.blocks:
            x = ln(dense(x)).relu()
        return self.head(x)

    def loss(self, tokens: np.ndarray) -> Tensor:
        idx, targets = self.windows(tokens)
        return cross_entropy(self.logits(idx), targets)

    def eval_loss(self, tokens: np.ndarray, chunk: int = 256) -> float:
        tokens = np.asarray(tokens)
        total, count = 0.0, 0
        with no_grad():
            for start in range(0, len(tokens), chunk):
                part = tokens[start : start + chunk]
                n_tok = part.shape[0] * (part.shape[1] - 1)
                total += self.loss(part).item() * n_tok
                count += n_tok
        return total / count


def lr_schedule(t: float, T: int, warmup_steps: int, lr_min: float, lr_max: float) -> float:
    """Linear warm-up from lr_min to lr_max, then cosine decay back to lr_min at T."""
    if warmup_steps >= T:
        raise ValueError(f"warmup_steps ({warmup_steps}) must be < T ({T})")
    if t < 0 or t > T:
        raise ValueError(f"step {t} outside [0, {T}]")
    if t < warmup_steps:
        return lr_min + (lr_max - lr_min) * t / warmup_steps
    frac = (t - warmup_steps) / (T - warmup_steps)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))


@dataclass
class AgentState:
    n: np.ndarray
    t_norm: float
    losses: np.ndarray
    delta_losses: np.ndarray
    layer_norms: np.ndarray
    delta_layer_norms: np.ndarray

    def vector(self) -> np.ndarray:
        """Concatenate the fields in declaration order."""
        return np.concatenate([
            self.n, [self.t_norm], self.losses, self.delta_losses,
            self.layer_norms, self.delta_layer_norms,
        ]).astype(np.float64)

    @staticmethod
    def dim(k: int, m: int) -> int:
        return 3 * k + 2 * m + 1


@dataclass
class EnvStepOutput:
    state_next: AgentState
    per_domain_losses: np.ndarray
    per_domain_selected_grads: np.ndarray  # (k, d) over the reward-layer mask
    realized_counts: np.ndarray


class LMEnv:
    """Training environment wrapping a TinyLM and a domain corpus.

    ``step`` trains the model on one mixture batch with the update
    ``theta -= lr * sum_i alpha_i * grad(loss_i)`` (routed through Adam
    unless ``optimizer="sgd"``) and reports the next agent state.
    """

    def __init__(self, config: TinyLMConfig, corpus: DomainCorpus, total_steps: int,
                 explore_frac: float = 0.1, optimizer: str = "adam", probe_docs: int = 8):
        config.validate()
        if config.vocab_size != corpus.vocab_size:
            raise ValueError(
                f"vocab mismatch: model has {config.vocab_size}, corpus has {corpus.vocab_size}"
            )
        if optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {optimizer!r}")
        self.config = config
        self.corpus = corpus
        self.T = total_steps
        self.explore_frac = explore_frac
        self.optimizer = optimizer
        self.probe_docs = probe_docs
        self.model: TinyLM | None = None

    @property
    def k(self) -> int:
        return self.corpus.k

    @property
    def m(self) -> int:
        return len(self.config.state_layer_indices)

    @property
    def state_dim(self) -> int:
        return AgentState.dim(self.k, self.m)

    def _layer_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(self.model.params[n].data) for n in self.config.state_layers])

    def reset(self, seed: int) -> AgentState:
        init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
        self.model = TinyLM(self.config, np.random.default_rng(init_seq))
        self.rng = np.random.default_rng(sample_seq)
        self.adam = AdamState.for_params(self.model.params)
        self.t = 0
        self.cum_counts = np.zeros(self.k, dtype=np.int64)
        # s^0 losses: first few training documents of each domain (no RNG draw)
        self.losses = np.array([
            self.model.eval_loss(d[: self.probe_docs]) for d in self.corpus.train
        ])
        norms = self._layer_norms()
        self.state = AgentState(
            n=np.zeros(self.k), t_norm=0.0, losses=self.losses.copy(),
            delta_losses=np.zeros(self.k), layer_norms=norms,
            delta_layer_norms=np.zeros(self.m),
        )
        return self.state

    def step(self, alpha, batch_size: int, lr: float) -> EnvStepOutput:
        if self.model is None:
            raise RuntimeError("call reset() before step()")
        a = check_simplex(alpha, self.k)
        params = self.model.params
        batch = sample_batch(self.corpus, a, batch_size, self.explore_frac, self.rng)

        mask = self.config.reward_mask
        losses = self.losses.copy()
        domain_grads = []
        for i, sub in enumerate(batch.sub_batches):
            if len(sub) == 0:
                domain_grads.append(None)
                continue
            params.zero_grad()
            loss = self.model.loss(sub)
            val = loss.item()
            if not math.isfinite(val):
                raise DivergenceError(f"non-finite loss {val} on domain {i} at step {self.t}")
            loss.backward()
            losses[i] = val
            domain_grads.append(params.grads())

        selected = np.zeros((self.k, sum(params[n].size for n in mask)))
        for i, g in enumerate(domain_grads):
            if g is not None:
                selected[i] = np.concatenate([g[n].reshape(-1) for n in mask])

        # weighted sum in fixed domain order
        combined = {name: np.zeros_like(t.data) for name, t in params}
        for i, g in enumerate(domain_grads):
            if g is None or a[i] == 0.0:
                continue
            for name in combined:
                combined[name] += a[i] * g[name]
        for name, g in combined.items():
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in {name} at step {self.t}")

        before = [params[n].data.copy() for n in self.config.state_layers]
        params.set_grads(combined)
        if self.optimizer == "adam":
            adam_step(params, self.adam, lr)
        else:
            sgd_step(params, lr)
        params.zero_grad()

        self.t += 1
        self.cum_counts += batch.counts
        norms = self._layer_norms()
        dnorms = np.array([
            np.linalg.norm(params[n].data - b) for n, b in zip(self.config.state_layers, before)
        ])
        total = self.cum_counts.sum()
        self.state = AgentState(
            n=self.cum_counts / total, t_norm=self.t / self.T, losses=losses.copy(),
            delta_losses=losses - self.losses, layer_norms=norms, delta_layer_norms=dnorms,
        )
        self.losses = losses
        return EnvStepOutput(self.state, losses.copy(), selected, batch.counts.copy())

    def validation_losses(self) -> np.ndarray:
        return validation_loss_per_domain(self.model, self.corpus)
