"""Synthetic multi-domain token corpora and mixture batch sampling.

Every domain is a first-order Markov chain over ``vocab_size`` tokens. Its
transition table is a convex blend of one shared hub table and a private
table. Domain ``i`` takes ``b_i`` of its mass from the hub, where ``b_i`` is
the mean off-diagonal entry of row ``i`` of the overlap matrix. Identity
overlap gives independent private chains; all-ones overlap gives one shared
chain for every domain.

Binary corpus file layout (all little-endian int32)::

    magic (0x4D444341, "ACDM")  version (1)  k  vocab_size  seq_len
    docs[0] ... docs[k-1]                      # documents per domain
    tokens of domain 0, row-major (docs[0] x seq_len)
    ...
    tokens of domain k-1

The validation split is not stored: it is always the last
``max(1, docs // 10)`` documents of each domain.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

MAGIC = 0x4D444341
FORMAT_VERSION = 1
SIMPLEX_TOL = 1e-9


@dataclass
class CorpusSpec:
    k: int = 8
    vocab_size: int = 256
    seq_len: int = 64
    docs_per_domain: int = 400
    overlap: list[list[float]] | None = None
    seed: int = 0
    # Dirichlet concentration of each transition row; small = peaky, learnable chains
    concentration: float = 0.1

    def overlap_matrix(self) -> np.ndarray:
        if self.overlap is None:
            return np.eye(self.k)
        return np.asarray(self.overlap, dtype=np.float64)

    def validate(self) -> None:
        if self.k < 2:
            raise ValueError(f"need k >= 2 domains, got {self.k}")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.seq_len < 2:
            raise ValueError(f"seq_len must be >= 2, got {self.seq_len}")
        if self.docs_per_domain < 2:
            raise ValueError("docs_per_domain must be >= 2 (train and validation)")
        if self.concentration <= 0:
            raise ValueError("concentration must be positive")
        ov = self.overlap_matrix()
        if ov.shape != (self.k, self.k):
            raise ValueError(f"overlap must be {self.k}x{self.k}, got {ov.shape}")
        if not np.allclose(ov, ov.T, atol=0, rtol=0):
            raise ValueError("overlap matrix must be symmetric")
        if not np.all(np.diag(ov) == 1.0):
            raise ValueError("overlap diagonal must be 1")
        if np.any(ov < 0) or np.any(ov > 1):
            raise ValueError("overlap entries must lie in [0, 1]")


def hub_overlap(k: int = 8, hub: int = 0, hub_overlap: float = 0.8, other: float = 0.1) -> list[list[float]]:
    """One hub domain sharing ``hub_overlap`` with every other domain; the rest share ``other``."""
    ov = np.full((k, k), other)
    ov[hub, :] = hub_overlap
    ov[:, hub] = hub_overlap
    np.fill_diagonal(ov, 1.0)
    return ov.tolist()


@dataclass
class DomainCorpus:
    train: list[np.ndarray]
    validation: list[np.ndarray]
    vocab_size: int
    seq_len: int
    spec: CorpusSpec | None = None
    transition_tables: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return len(self.train)

    @property
    def sizes(self) -> list[int]:
        return [len(t) for t in self.train]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<3i", self.k, self.vocab_size, self.seq_len))
        for tr, va in zip(self.train, self.validation):
            h.update(tr.astype("<i4").tobytes())
            h.update(va.astype("<i4").tobytes())
        return h.hexdigest()[:16]


def blend_weights(overlap: np.ndarray) -> np.ndarray:
    k = overlap.shape[0]
    off = overlap.sum(axis=1) - np.diag(overlap)
    return off / (k - 1)


def n_validation(docs: int) -> int:
    return max(1, docs // 10)


def _sample_chains(rng: np.random.Generator, table: np.ndarray, n: int, seq_len: int) -> np.ndarray:
    vocab = table.shape[0]
    cum = np.cumsum(table, axis=1)
    cum[:, -1] = 1.0
    out = np.empty((n, seq_len), dtype=np.int32)
    out[:, 0] = rng.integers(0, vocab, size=n)
    for p in range(1, seq_len):
        u = rng.random(n)
        rows = cum[out[:, p - 1]]
        out[:, p] = np.minimum((rows < u[:, None]).sum(axis=1), vocab - 1)
    return out


def generate(spec: CorpusSpec) -> DomainCorpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    v = spec.vocab_size
    alpha = np.full(v, spec.concentration)
    hub = rng.dirichlet(alpha, size=v)
    private = [rng.dirichlet(alpha, size=v) for _ in range(spec.k)]
    b = blend_weights(spec.overlap_matrix())

    tables, train, val = [], [], []
    n_val = n_validation(spec.docs_per_domain)
    for i in range(spec.k):
        table = b[i] * hub + (1.0 - b[i]) * private[i]
        tables.append(table)
        docs = _sample_chains(rng, table, spec.docs_per_domain, spec.seq_len)
        train.append(docs[:-n_val])
        val.append(docs[-n_val:])
    return DomainCorpus(train, val, v, spec.seq_len, spec=spec, transition_tables=tables)


@dataclass
class Batch:
    sub_batches: list[np.ndarray]
    counts: np.ndarray
    explore_counts: np.ndarray

    @property
    def size(self) -> int:
        return int(self.counts.sum())


def check_simplex(alpha: Sequence[float], k: int | None = None) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1 or (k is not None and a.size != k):
        raise ValueError(f"domain weights must be a vector of length {k}, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0) or abs(a.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"domain weights are not on the simplex: {a}")
    return a


def exploration_counts(k: int, batch_size: int, explore_frac: float) -> np.ndarray:
    """Stratified exploration slots; the remainder goes to the lowest-indexed domains."""
    n_explore = int(np.floor(explore_frac * batch_size))
    counts = np.full(k, n_explore // k, dtype=np.int64)
    counts[: n_explore % k] += 1
    return counts


def sample_batch(corpus: DomainCorpus, alpha: Sequence[float], batch_size: int,
                 explore_frac: float, rng: np.random.Generator) -> Batch:
    """Draw a batch from the mixture ``sum_i alpha_i * UNIF(D_i)`` plus uniform exploration slots."""
    k = corpus.k
    a = check_simplex(alpha, k)
    if explore_frac < 0 or explore_frac > 1:
        raise ValueError(f"explore_frac must lie in [0, 1], got {explore_frac}")
    if explore_frac > 0 and batch_size < k:
        raise ValueError(f"batch_size {batch_size} < k={k} with exploration enabled")
    if any(s == 0 for s in corpus.sizes):
        raise ValueError("cannot sample from an empty domain")

    explore = exploration_counts(k, batch_size, explore_frac)
    remaining = batch_size - int(explore.sum())
    drawn = rng.multinomial(remaining, a / a.sum())
    counts = explore + drawn
    subs = []
    for i in range(k):
        idx = rng.integers(0, corpus.sizes[i], size=int(counts[i]))
        subs.append(corpus.train[i][idx])
    return Batch(subs, counts, explore)


class LossModel(Protocol):
    def eval_loss(self, tokens: np.ndarray) -> float: ...


def validation_loss_per_domain(model: LossModel, corpus: DomainCorpus) -> np.ndarray:
    """Mean token cross-entropy of ``model`` on each domain's full validation split."""
    out = np.empty(corpus.k)
    for i, docs in enumerate(corpus.validation):
        if len(docs) == 0:
            raise ValueError(f"domain {i} has an empty validation split")
        out[i] = model.eval_loss(docs)
    return out


def save_corpus(corpus: DomainCorpus, path: str | Path) -> None:
    docs = [len(t) + len(v) for t, v in zip(corpus.train, corpus.validation)]
    with open(path, "wb") as f:
        f.write(struct.pack("<5i", MAGIC, FORMAT_VERSION, corpus.k, corpus.vocab_size, corpus.seq_len))
        f.write(struct.pack(f"<{corpus.k}i", *docs))
        for tr, va in zip(corpus.train, corpus.validation):
            f.write(np.concatenate([tr, va]).astype("<i4").tobytes())


def load_corpus(path: str | Path) -> DomainCorpus:
    raw = Path(path).read_bytes()
    if len(raw) < 20:
        raise ValueError(f"{path}: truncated corpus header")
    magic, version, k, vocab, seq_len = struct.unpack_from("<5i", raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic:#x}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported corpus version {version}")
    docs = struct.unpack_from(f"<{k}i", raw, 20)
    offset = 20 + 4 * k
    expected = offset + 4 * seq_len * sum(docs)
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} does not match header ({expected})")
    train, val = [], []
    for n in docs:
        arr = np.frombuffer(raw, dtype="<i4", count=n * seq_len, offset=offset).reshape(n, seq_len)
        offset += 4 * n * seq_len
        arr = arr.astype(np.int32)
        if arr.size and (arr.min() < 0 or arr.max() >= vocab):
            raise ValueError(f"{path}: token outside vocabulary")
        n_val = n_validation(n)
        train.append(arr[:-n_val])
        val.append(arr[-n_val:])
    return DomainCorpus(train, val, vocab, seq_len)
