"""Named parameter collections, flattening, and optimizers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .tensor import Tensor


class ParamSet:
    """Ordered mapping of name -> parameter Tensor.

    Iteration and flattening follow registration order, which is the
    module construction order followed by field declaration order inside
    each module. Alignment scores depend on this order being stable.
    """

    def __init__(self, items: Sequence[tuple[str, Tensor]] = ()):
        self._params: dict[str, Tensor] = {}
        for name, t in items:
            self.add(name, t)

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self._params.values()])

    def unflatten(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"flat vector has {flat.size} entries, expected {self.n_params}")
        offset = 0
        for t in self._params.values():
            n = t.size
            t.data = flat[offset : offset + n].reshape(t.shape).copy()
            offset += n

    def grads(self) -> dict[str, np.ndarray]:
        """Copy of the current gradients; missing grads come back as zeros."""
        return {
            name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def set_grads(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            t.grad = np.array(grads[name], dtype=np.float64, copy=True)

    def copy_from(self, other: ParamSet) -> None:
        for (name, t), (oname, o) in zip(self, other):
            if name != oname or t.shape != o.shape:
                raise ValueError(f"parameter mismatch: {name}{t.shape} vs {oname}{o.shape}")
            t.data = o.data.copy()

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(self.flatten().tobytes()).hexdigest()


def flat_select(grads: Mapping[str, np.ndarray], mask: Sequence[str]) -> np.ndarray:
    """Concatenate the masked gradient entries in the given (stable) order."""
    if not mask:
        raise ValueError("mask selects no parameters")
    return np.concatenate([np.asarray(grads[name]).reshape(-1) for name in mask])


def flat_dot(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray], mask: Sequence[str]) -> float:
    """Inner product of two gradient sets restricted to the named parameters."""
    if not mask:
        raise ValueError("mask selects no parameters")
    total = 0.0
    for name in mask:
        total += float(np.dot(np.asarray(a[name]).reshape(-1), np.asarray(b[name]).reshape(-1)))
    return total


def global_grad_norm(params: ParamSet) -> float:
    sq = 0.0
    for _, t in params:
        if t.grad is not None:
            sq += float(np.sum(t.grad * t.grad))
    return math.sqrt(sq)


def clip_grad_norm(params: ParamSet, max_norm: float) -> bool:
    """Rescale grads in place to global norm ``max_norm``. Returns True if clipped."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, t in params:
            if t.grad is not None:
                t.grad *= scale
        return True
    return False


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, **kw) -> AdamState:
        st = cls(**kw)
        for name, t in params:
            st.m[name] = np.zeros_like(t.data)
            st.v[name] = np.zeros_like(t.data)
        return st


def adam_step(params: ParamSet, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update. Gradients are left in place."""
    for name, t in params:
        if t.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in params:
        g = t.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def sgd_step(params: ParamSet, lr: float) -> None:
    for name, t in params:
        if t.grad is None:
            raise ValueError(f"sgd_step: parameter {name!r} has no gradient")
        t.data = t.data - lr * t.grad
