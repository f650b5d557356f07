"""Flat binary checkpoints for the LM and the actor/critic networks.

Layout, little-endian throughout::

    int32  magic      0x504B4341 ("ACKP")
    int32  version    1
    int32  kind       0 = tiny LM, 1 = actor, 2 = critic
    int32  n_header   number of int32 header fields that follow
    int32  header[n_header]
    int64  n_params
    float64 params[n_params]     # ParamSet flat_view order

Header fields:

    LM:     vocab_size, embed_dim, n_layers, hidden_dim, seq_len, context,
            n_reward, reward indices..., n_state, state indices...
    actor:  k, m, state_dim, hidden, depth, out_dim
    critic: k, m, state_dim, hidden, depth, out_dim
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .agent import ActorNet, CriticNet
from .lm_env import TinyLM, TinyLMConfig

MAGIC = 0x504B4341
VERSION = 1
KIND_LM, KIND_ACTOR, KIND_CRITIC = 0, 1, 2


def _write(path, kind: int, header: list[int], flat: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<4i", MAGIC, VERSION, kind, len(header)))
        f.write(struct.pack(f"<{len(header)}i", *header))
        f.write(struct.pack("<q", flat.size))
        f.write(np.asarray(flat, dtype="<f8").tobytes())


def _read(path) -> tuple[int, list[int], np.ndarray]:
    raw = Path(path).read_bytes()
    magic, version, kind, n_header = struct.unpack_from("<4i", raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {magic:#x})")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = list(struct.unpack_from(f"<{n_header}i", raw, 16))
    offset = 16 + 4 * n_header
    (n_params,) = struct.unpack_from("<q", raw, offset)
    offset += 8
    if len(raw) != offset + 8 * n_params:
        raise ValueError(f"{path}: truncated parameter block")
    flat = np.frombuffer(raw, dtype="<f8", count=n_params, offset=offset).astype(np.float64)
    return kind, header, flat


def save_lm(model: TinyLM, path) -> None:
    c = model.config
    header = [c.vocab_size, c.embed_dim, c.n_layers, c.hidden_dim, c.seq_len, c.context,
              len(c.reward_layer_indices), *c.reward_layer_indices,
              len(c.state_layer_indices), *c.state_layer_indices]
    _write(path, KIND_LM, header, model.params.flatten())


def load_lm(path) -> TinyLM:
    kind, h, flat = _read(path)
    if kind != KIND_LM:
        raise ValueError(f"{path}: expected an LM checkpoint, found kind {kind}")
    n_reward = h[6]
    reward = h[7 : 7 + n_reward]
    n_state = h[7 + n_reward]
    state = h[8 + n_reward : 8 + n_reward + n_state]
    config = TinyLMConfig(vocab_size=h[0], embed_dim=h[1], n_layers=h[2], hidden_dim=h[3],
                          seq_len=h[4], context=h[5], reward_layer_indices=list(reward),
                          state_layer_indices=list(state))
    model = TinyLM(config, np.random.default_rng(0))
    model.params.unflatten(flat)
    return model


def save_net(net: ActorNet | CriticNet, path, m: int) -> None:
    kind = KIND_ACTOR if net.kind == "actor" else KIND_CRITIC
    header = [net.k, m, net.state_dim, net.hidden, net.depth, net.out_dim]
    _write(path, kind, header, net.params.flatten())


def load_net(path) -> tuple[ActorNet | CriticNet, int]:
    """Returns the network and the state-layer count ``m`` it was trained with."""
    kind, h, flat = _read(path)
    k, m, state_dim, hidden, depth, out_dim = h
    rng = np.random.default_rng(0)
    if kind == KIND_ACTOR:
        net = ActorNet(state_dim, k, hidden, depth, rng)
    elif kind == KIND_CRITIC:
        net = CriticNet(state_dim, k, hidden, depth, rng, out_dim)
    else:
        raise ValueError(f"{path}: expected an actor or critic checkpoint, found kind {kind}")
    net.params.unflatten(flat)
    return net, m
