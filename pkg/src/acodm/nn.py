"""Layers shared by the language model and the actor/critic networks."""

from __future__ import annotations

import numpy as np

from .params import ParamSet
from .tensor import Tensor, layer_norm


class Linear:
    def __init__(self, params: ParamSet, prefix: str, n_in: int, n_out: int,
                 rng: np.random.Generator, init_scale: float = 1.0):
        std = init_scale * np.sqrt(2.0 / n_in)
        self.weight = params.add(f"{prefix}.weight", Tensor(rng.normal(0.0, std, size=(n_in, n_out))))
        self.bias = params.add(f"{prefix}.bias", Tensor(np.zeros(n_out)))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm:
    def __init__(self, params: ParamSet, prefix: str, dim: int):
        self.gain = params.add(f"{prefix}.gain", Tensor(np.ones(dim)))
        self.bias = params.add(f"{prefix}.bias", Tensor(np.zeros(dim)))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class MLP:
    """``depth`` dense layers; every layer but the last is followed by layer norm and ReLU.

    The output layer is initialised with ``out_scale`` times the usual
    variance so heads start close to zero.
    """

    def __init__(self, params: ParamSet, prefix: str, n_in: int, hidden: int, n_out: int,
                 depth: int, rng: np.random.Generator, out_scale: float = 1e-2):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.layers: list[tuple[Linear, LayerNorm | None]] = []
        width = n_in
        for i in range(depth - 1):
            lin = Linear(params, f"{prefix}.fc{i}", width, hidden, rng)
            ln = LayerNorm(params, f"{prefix}.ln{i}", hidden)
            self.layers.append((lin, ln))
            width = hidden
        self.layers.append((Linear(params, f"{prefix}.out", width, n_out, rng, init_scale=out_scale), None))

    def __call__(self, x: Tensor) -> Tensor:
        for lin, ln in self.layers:
            x = lin(x)
            if ln is not None:
                x = ln(x).relu()
        return x
