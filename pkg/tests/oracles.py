"""Independent reference implementations used as test oracles.

Nothing here calls into the autodiff tape: finite differences run on plain
numpy forward passes, and dot products are explicit Python loops.
"""

from __future__ import annotations

import numpy as np

from acodm.tensor import (Tensor, concat, cross_entropy, embedding, layer_norm, log_softmax, mse,
                          softmax)


def central_fd(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central difference gradient of scalar ``f`` w.r.t. every entry of ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Max entrywise |a - b| / max(|a|, |b|, floor)."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def loop_dot(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    for x, y in zip(np.ravel(a).tolist(), np.ravel(b).tolist()):
        total += x * y
    return total


def pairwise_alignment(grads: np.ndarray) -> np.ndarray:
    """``W_i = sum_j <g_i, g_j>`` via a double loop of pairwise dot products."""
    k = len(grads)
    W = np.zeros(k)
    for i in range(k):
        for j in range(k):
            W[i] += float(np.dot(grads[i], grads[j]))
    return W


# -- random computation graphs -------------------------------------------------

_UNARY = ["tanh", "relu", "exp_small", "log_pos", "square", "softmax", "log_softmax",
          "layer_norm", "transpose_back", "slice_concat", "scale_div"]
_BINARY = ["add", "sub", "mul", "matmul"]


def random_graph(rng: np.random.Generator):
    """A random composition of supported ops on small random leaves.

    Returns ``(build, leaves)`` where ``build()`` recomputes the scalar loss
    Tensor from the current values of ``leaves`` (a dict of Tensors).
    """
    # width >= 3: a 2-wide layer norm is a near-sign function whose curvature swamps FD
    n, d = int(rng.integers(2, 5)), int(rng.integers(3, 6))
    vocab = int(rng.integers(3, 6))
    leaves = {
        "x": Tensor(rng.normal(size=(n, d)), requires_grad=True),
        "w": Tensor(rng.normal(size=(d, d)) / np.sqrt(d), requires_grad=True),
        "b": Tensor(rng.normal(size=(d,)), requires_grad=True),
        "gain": Tensor(1.0 + 0.1 * rng.normal(size=(d,)), requires_grad=True),
        "bias": Tensor(0.1 * rng.normal(size=(d,)), requires_grad=True),
        "emb": Tensor(rng.normal(size=(vocab, d)), requires_grad=True),
        "head": Tensor(rng.normal(size=(d, vocab)) / np.sqrt(d), requires_grad=True),
    }
    idx = rng.integers(0, vocab, size=n)
    targets = rng.integers(0, vocab, size=n)
    target_mat = rng.normal(size=(n, d))
    ops = [str(rng.choice(_UNARY + _BINARY)) for _ in range(int(rng.integers(3, 7)))]
    final = str(rng.choice(["cross_entropy", "mse", "mean_square", "weighted_sum"]))
    coef = rng.normal(size=(n, d))

    def build() -> Tensor:
        L = leaves
        h = L["x"] + embedding(L["emb"], idx)
        for op in ops:
            if op == "tanh":
                h = h.tanh()
            elif op == "relu":
                h = h.relu() + 0.1 * h
            elif op == "exp_small":
                h = (h * 0.3).tanh().exp()
            elif op == "log_pos":
                h = (h * h + 1.0).log()
            elif op == "square":
                h = (h.tanh() ** 2) + h
            elif op == "softmax":
                h = softmax(h, axis=-1)
            elif op == "log_softmax":
                h = log_softmax(h, axis=-1)
            elif op == "layer_norm":
                h = layer_norm(h, L["gain"], L["bias"])
            elif op == "transpose_back":
                h = h.T.T
            elif op == "slice_concat":
                h = concat([h[:, 1:], h[:, :1]], axis=1)
            elif op == "scale_div":
                h = h / (h * h + 2.0)
            elif op == "add":
                h = h + L["b"]
            elif op == "sub":
                h = L["b"] - h
            elif op == "mul":
                h = h * L["b"]
            elif op == "matmul":
                h = h @ L["w"]
        if final == "cross_entropy":
            return cross_entropy(h @ L["head"], targets)
        if final == "mse":
            return mse(h, target_mat)
        if final == "mean_square":
            return (h * h).mean()
        return (h * coef).sum().reshape(1).sum()

    return build, leaves


def graph_gradient_error(rng: np.random.Generator, h: float = 1e-5) -> float:
    """Worst relative error between tape and central-difference gradients on one random graph."""
    build, leaves = random_graph(rng)
    loss = build()
    for t in leaves.values():
        t.grad = None
    loss.backward()
    worst = 0.0
    for t in leaves.values():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = central_fd(lambda: build().item(), t.data, h)
        worst = max(worst, rel_err(analytic, numeric))
    return worst


# -- analytic DDPG benchmark ----------------------------------------------------

QUAD_TARGET = np.array([0.5, 0.3, 0.2])


def quadratic_ddpg_gap(seed: int, steps: int = 5000) -> float:
    """Full DDPG loop on a stateless env with reward ``-||a - a*||^2``.

    Returns the final L1 gap between the deterministic policy and ``a*``.
    Discounting is off (gamma = 0) since the env has no dynamics.
    """
    from acodm.agent import AgentConfig, DDPGAgent, noise_scale

    lr_max, lr_min = 1e-3, 1e-4
    cfg = AgentConfig(hidden=64, depth=3, gamma=0.0, tau=0.05, batch_size=64,
                      lr_max=lr_max, lr_min=lr_min)
    agent = DDPGAgent(4, len(QUAD_TARGET), cfg, seed, capacity=1000)
    s = np.ones(4)
    for t in range(steps):
        a = agent.act(s, noise_scale(t, steps, 1.0, 0.1))
        agent.buffer.add(s, a, -np.sum((a - QUAD_TARGET) ** 2), s)
        lr = lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * t / steps))
        agent.train_step(lr)
    return float(np.abs(agent.act(s, 0.0) - QUAD_TARGET).sum())
