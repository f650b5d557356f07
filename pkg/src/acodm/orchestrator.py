"""Experiment driver: AC-ODM, proxy-to-target transfer, baselines, and reports.

Each run writes into its output directory:

``metrics.csv``
    One row per logging interval plus a step-0 row. Columns are ``step``,
    ``alpha_i``, ``train_loss_i``, ``val_loss_i``, ``val_ppl_i``,
    ``mean_val_loss``, ``mean_val_ppl``, ``reward_i`` (i = 0..k-1). Floats are
    written with 17 significant digits; fields that were not measured at a
    row (validation between evaluations, alpha before the first step) are
    empty. The file contains no timing data and is bitwise reproducible.
``summary.json``
    Mode, seed, T, corpus digest, final losses, wall-clock breakdown
    (environment step, alignment, agent) and the overhead fraction.
``actor.bin`` / ``critic.bin``
    Agent checkpoints (AC-ODM modes only). The actor is the target copy.
``proxy/``
    Stage-1 outputs of a transfer run.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .agent import AgentConfig, AgentDivergence, DDPGAgent, noise_scale
from .baselines import Exp3State, StaticPolicy, exp3_policy, exp3_update
from .checkpoint import load_net, save_net
from .corpus import CorpusSpec, DomainCorpus, check_simplex, generate, hub_overlap, load_corpus
from .lm_env import DivergenceError, LMEnv, TinyLMConfig, lr_schedule
from .reward import RewardTracker, alignment
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

MODES = ("ac-odm", "transfer", "exp3", "static")


class ConfigError(ValueError):
    pass


# -- configuration -----------------------------------------------------------


@dataclass
class ScheduleConfig:
    T: int = 3000
    warmup_steps: int = 60
    batch_size: int = 256
    explore_frac: float = 0.1
    lr_min: float = 2.5e-4
    lr_max: float = 2.5e-3
    optimizer: str = "adam"
    log_interval: int = 10
    eval_interval: int = 50


@dataclass
class RewardConfig:
    xi: float = 0.9
    source: str = "smoothed"
    reduction: str = "sum"
    standardize: bool = True
    alpha_floor: float = 1e-3


@dataclass
class Exp3Config:
    lr: float = 0.01
    explore: float = 0.1
    clip_rewards: bool = True
    smoothing: float = 0.9


def _default_corpus() -> CorpusSpec:
    return CorpusSpec(k=8, vocab_size=256, seq_len=64, docs_per_domain=400,
                      overlap=hub_overlap(8), seed=0)


def _default_proxy() -> TinyLMConfig:
    return TinyLMConfig(n_layers=2, hidden_dim=32, reward_layer_indices=[1],
                        state_layer_indices=[0, 1])


def _default_target() -> TinyLMConfig:
    return TinyLMConfig(n_layers=4, hidden_dim=64, reward_layer_indices=[3],
                        state_layer_indices=[0, 2])


@dataclass
class RunConfig:
    mode: str = "ac-odm"
    seed: int = 0
    output_dir: str = "runs/default"
    corpus: CorpusSpec = field(default_factory=_default_corpus)
    corpus_file: str | None = None
    proxy: TinyLMConfig = field(default_factory=_default_proxy)
    target: TinyLMConfig = field(default_factory=_default_target)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    exp3: Exp3Config = field(default_factory=Exp3Config)
    # "uniform", "prior" (proportional to domain sizes) or an explicit vector
    static_weights: Any = "uniform"
    base_weights: Any = "uniform"
    warmup_noise_std: float = 0.02
    agent_updates: bool = True
    actor_checkpoint: str | None = None

    def validate(self) -> None:
        s = self.schedule
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if s.T < 1:
            raise ConfigError("T must be >= 1")
        if not 0 <= s.warmup_steps < s.T:
            raise ConfigError(f"warmup_steps ({s.warmup_steps}) must be in [0, T={s.T})")
        if not 0.0 <= s.explore_frac <= 0.5:
            raise ConfigError(f"explore_frac must lie in [0, 0.5], got {s.explore_frac}")
        if s.log_interval < 1 or s.eval_interval < 1:
            raise ConfigError("log_interval and eval_interval must be >= 1")
        if s.eval_interval % s.log_interval:
            raise ConfigError("eval_interval must be a multiple of log_interval")
        if self.warmup_noise_std < 0:
            raise ConfigError("warmup_noise_std must be >= 0")
        try:
            self.corpus.validate()
            self.proxy.validate()
            self.target.validate()
            self.agent.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        for lm in (self.proxy, self.target):
            if lm.vocab_size != self.corpus.vocab_size and self.corpus_file is None:
                raise ConfigError(
                    f"model vocab_size {lm.vocab_size} != corpus vocab_size {self.corpus.vocab_size}"
                )

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        hint = hints.get(key)
        if isinstance(hint, type) and dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, f"{where}.{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "config")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return config_from_dict(data)


def resolve_weights(spec: Any, corpus: DomainCorpus) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "uniform":
            return StaticPolicy.uniform(corpus.k).weights
        if spec == "prior":
            return StaticPolicy.corpus_prior(corpus.sizes).weights
        raise ConfigError(f"unknown weight spec {spec!r}")
    try:
        return check_simplex(spec, corpus.k)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def warmup_weights(base: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    """Base weights plus N(0, std^2) noise; negatives clamped to 1e-4, then renormalized."""
    if std == 0:
        return base.copy()
    a = base + rng.normal(0.0, std, size=base.shape)
    a = np.where(a < 0, 1e-4, a)
    return a / a.sum()


def load_corpus_for(config: RunConfig) -> DomainCorpus:
    if config.corpus_file:
        corpus = load_corpus(config.corpus_file)
        for lm in (config.proxy, config.target):
            if lm.vocab_size != corpus.vocab_size:
                raise ConfigError(
                    f"model vocab_size {lm.vocab_size} != corpus file vocab {corpus.vocab_size}"
                )
        return corpus
    return generate(config.corpus)


# -- metrics -----------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{float(x):.17g}"


def metrics_header(k: int) -> list[str]:
    cols = ["step"]
    for name in ("alpha", "train_loss", "val_loss", "val_ppl"):
        cols += [f"{name}_{i}" for i in range(k)]
    cols += ["mean_val_loss", "mean_val_ppl"]
    cols += [f"reward_{i}" for i in range(k)]
    return cols


@dataclass
class MetricsRow:
    step: int
    alpha: np.ndarray | None = None
    train_loss: np.ndarray | None = None
    val_loss: np.ndarray | None = None
    reward: np.ndarray | None = None

    def cells(self, k: int) -> list[str]:
        def vec(v):
            return [_fmt(x) for x in v] if v is not None else [""] * k

        out = [str(self.step)] + vec(self.alpha) + vec(self.train_loss) + vec(self.val_loss)
        if self.val_loss is not None:
            ppl = np.exp(self.val_loss)
            out += vec(ppl)
            # perplexity of the unweighted mean loss is exp(mean); the mean of
            # per-domain perplexities is the reported average
            out += [_fmt(np.mean(self.val_loss)), _fmt(np.mean(ppl))]
        else:
            out += [""] * k + ["", ""]
        out += vec(self.reward)
        return out


class MetricsWriter:
    def __init__(self, path: Path, k: int):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.k = k
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(metrics_header(k))
        self.rows: list[MetricsRow] = []

    def write(self, row: MetricsRow) -> None:
        self._w.writerow(row.cells(self.k))
        self._fh.flush()
        self.rows.append(row)

    def close(self) -> None:
        self._fh.close()


@dataclass
class Timings:
    env: float = 0.0
    alignment: float = 0.0
    agent: float = 0.0
    total: float = 0.0
    steps: int = 0

    @property
    def overhead(self) -> float:
        return (self.alignment + self.agent) / self.total if self.total > 0 else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["overhead_fraction"] = self.overhead
        return d


# -- policies ----------------------------------------------------------------


class Policy:
    """Chooses domain weights each step and observes the outcome."""

    def alpha(self, t: int, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observe(self, t: int, state: np.ndarray, alpha: np.ndarray, out, W: np.ndarray) -> np.ndarray | None:
        """Returns the per-domain reward to log (None -> log raw alignment)."""
        return None


class FixedWeights(Policy):
    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64).copy()

    def alpha(self, t, state):
        return self.weights.copy()


class ScheduledWeights(Policy):
    """Replays a recorded per-step weight sequence."""

    def __init__(self, schedule: Sequence[np.ndarray]):
        self.schedule = [np.asarray(a, dtype=np.float64) for a in schedule]

    def alpha(self, t, state):
        return self.schedule[t].copy()


class Exp3Mixer(Policy):
    def __init__(self, k: int, cfg: Exp3Config, vocab_size: int):
        clip = 2.0 * math.log(vocab_size) if cfg.clip_rewards else None
        self.state = Exp3State(k=k, lr=cfg.lr, explore=cfg.explore, reward_clip=clip,
                               smoothing=cfg.smoothing)

    def alpha(self, t, state):
        return exp3_policy(self.state)

    def observe(self, t, state, alpha, out, W):
        self.state = exp3_update(self.state, out.per_domain_losses, alpha,
                                 sampled=out.realized_counts > 0)
        return None


class FrozenActor(Policy):
    """Deterministic actor inference; never touches the parameters."""

    def __init__(self, actor):
        self.actor = actor

    def alpha(self, t, state):
        with no_grad():
            logits = self.actor.logits(Tensor(state.reshape(1, -1))).data[0]
        z = np.exp(logits - logits.max())
        return z / z.sum()


class ACODMController(Policy):
    """Warm-up with noisy base weights, then DDPG acting and learning every step."""

    def __init__(self, agent: DDPGAgent, tracker: RewardTracker, config: RunConfig,
                 base: np.ndarray, rng: np.random.Generator):
        self.agent = agent
        self.tracker = tracker
        self.cfg = config
        self.base = base
        self.rng = rng
        self.warmup_fitted = False
        self.timings: Timings | None = None
        self.warmup_losses: tuple[float, float] | None = None

    def _ac_lr(self, t: int) -> float:
        s, a = self.cfg.schedule, self.cfg.agent
        span = s.T - s.warmup_steps
        frac = (t - s.warmup_steps) / span if span > 0 else 1.0
        return a.lr_min + 0.5 * (a.lr_max - a.lr_min) * (1.0 + math.cos(math.pi * frac))

    def alpha(self, t, state):
        s = self.cfg.schedule
        if t < s.warmup_steps:
            return warmup_weights(self.base, self.cfg.warmup_noise_std, self.rng)
        if not self.warmup_fitted:
            self.warmup_fitted = True
            if len(self.agent.buffer):
                self.warmup_losses = self.agent.warmup_fit()
        sigma = noise_scale(t - s.warmup_steps, s.T - s.warmup_steps,
                            self.cfg.agent.noise_start, self.cfg.agent.noise_end)
        return self.agent.act(state, sigma)

    def observe(self, t, state, alpha, out, W):
        r_vec = self.tracker.per_domain(W, alpha)
        r_critic = self.tracker.critic_reward(r_vec, alpha)
        self.agent.buffer.add(state, alpha, r_critic, out.state_next.vector())
        if t >= self.cfg.schedule.warmup_steps and self.cfg.agent_updates:
            self.agent.train_step(self._ac_lr(t))
        return r_vec


# -- run loop ----------------------------------------------------------------


@dataclass
class RunResult:
    rows: list[MetricsRow]
    alphas: list[np.ndarray]
    timings: Timings
    final_val_loss: np.ndarray
    status: str = "ok"
    agent: DDPGAgent | None = None
    actor_checksum: str | None = None


def train_loop(env: LMEnv, policy: Policy, config: RunConfig, seed: int,
               writer: MetricsWriter | None = None) -> RunResult:
    """Run T environment steps under ``policy``, logging and timing each one."""
    s = config.schedule
    state = env.reset(seed).vector()
    rows: list[MetricsRow] = []
    alphas: list[np.ndarray] = []
    timings = Timings()

    def emit(row: MetricsRow):
        rows.append(row)
        if writer is not None:
            writer.write(row)

    val = env.validation_losses()
    emit(MetricsRow(step=0, val_loss=val))

    last_alpha = last_loss = last_reward = None
    for t in range(s.T):
        t0 = time.perf_counter()
        alpha = policy.alpha(t, state)
        alpha = check_simplex(alpha, env.k)
        t1 = time.perf_counter()
        lr = lr_schedule(t, s.T, s.warmup_steps, s.lr_min, s.lr_max)
        out = env.step(alpha, s.batch_size, lr)
        t2 = time.perf_counter()
        W = alignment(out.per_domain_selected_grads)
        t3 = time.perf_counter()
        logged = policy.observe(t, state, alpha, out, W)
        t4 = time.perf_counter()

        timings.env += t2 - t1
        timings.alignment += t3 - t2
        timings.agent += (t1 - t0) + (t4 - t3)
        timings.total += t4 - t0
        timings.steps += 1

        alphas.append(alpha)
        state = out.state_next.vector()
        last_alpha, last_loss = alpha, out.per_domain_losses
        last_reward = W if logged is None else logged
        done = t + 1
        if done % s.log_interval == 0 or done == s.T:
            if done % s.eval_interval == 0 or done == s.T:
                val = env.validation_losses()
                vrow = val
            else:
                vrow = None
            emit(MetricsRow(step=done, alpha=last_alpha, train_loss=last_loss,
                            val_loss=vrow, reward=last_reward))
    return RunResult(rows, alphas, timings, val)


def _write_summary(out_dir: Path, payload: dict) -> None:
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _summary(config: RunConfig, corpus: DomainCorpus, result: RunResult, lm: TinyLMConfig) -> dict:
    return {
        "mode": config.mode,
        "seed": config.seed,
        "T": config.schedule.T,
        "k": corpus.k,
        "corpus_digest": corpus.digest(),
        "lm": asdict(lm),
        "status": result.status,
        "final_val_loss": [float(x) for x in result.final_val_loss],
        "final_mean_val_loss": float(np.mean(result.final_val_loss)),
        "timings": result.timings.to_dict(),
        "actor_checksum": result.actor_checksum,
        "config": config.to_dict(),
    }


def _run_with_policy(config: RunConfig, corpus: DomainCorpus, lm: TinyLMConfig, policy: Policy,
                     out_dir: Path | None, seed: int) -> RunResult:
    env = LMEnv(lm, corpus, config.schedule.T, config.schedule.explore_frac, config.schedule.optimizer)
    writer = MetricsWriter(out_dir / "metrics.csv", corpus.k) if out_dir is not None else None
    try:
        result = train_loop(env, policy, config, seed, writer)
    finally:
        if writer is not None:
            writer.close()
    return result


def _flush_divergence(out_dir: Path | None, config: RunConfig, corpus: DomainCorpus, err: Exception):
    if out_dir is not None:
        _write_summary(out_dir, {
            "mode": config.mode, "seed": config.seed, "T": config.schedule.T,
            "corpus_digest": corpus.digest(), "status": "diverged", "error": str(err),
        })


def make_agent(config: RunConfig, env_k: int, state_dim: int, seed: int) -> tuple[DDPGAgent, RewardTracker]:
    rc = config.reward
    tracker = RewardTracker(env_k, xi=rc.xi, source=rc.source, reduction=rc.reduction,
                            standardize=rc.standardize, alpha_floor=rc.alpha_floor)
    capacity = config.agent.capacity or 10 * config.schedule.T
    agent = DDPGAgent(state_dim, env_k, config.agent, seed, capacity, reward_dim=tracker.out_dim)
    return agent, tracker


def run_acodm(config: RunConfig, corpus: DomainCorpus | None = None, lm: TinyLMConfig | None = None,
              out_dir: str | Path | None = None) -> RunResult:
    """Algorithm loop on one environment: warm-up, then act / train LM / learn every step."""
    corpus = corpus if corpus is not None else load_corpus_for(config)
    lm = lm if lm is not None else config.target
    out = Path(out_dir) if out_dir is not None else None
    env_seed, agent_seed, warm_seed = np.random.SeedSequence(config.seed).spawn(3)
    env_seed = int(env_seed.generate_state(1)[0])
    agent_seed = int(agent_seed.generate_state(1)[0])
    state_dim = 3 * corpus.k + 2 * len(lm.state_layer_indices) + 1
    agent, tracker = make_agent(config, corpus.k, state_dim, agent_seed)
    base = resolve_weights(config.base_weights, corpus)
    ctrl = ACODMController(agent, tracker, config, base, np.random.default_rng(warm_seed))
    try:
        result = _run_with_policy(config, corpus, lm, ctrl, out, env_seed)
    except (DivergenceError, AgentDivergence, FloatingPointError) as e:
        _flush_divergence(out, config, corpus, e)
        raise DivergenceError(str(e)) from e
    result.agent = agent
    result.actor_checksum = agent.actor_target.params.checksum()
    if out is not None:
        m = len(lm.state_layer_indices)
        save_net(agent.actor_target, out / "actor.bin", m)
        save_net(agent.critic, out / "critic.bin", m)
        summary = _summary(config, corpus, result, lm)
        summary["warmup_fit_mse"] = ctrl.warmup_losses
        summary["grad_clip_events"] = agent.clip_events
        _write_summary(out, summary)
    return result


def _env_seed(config: RunConfig) -> int:
    return int(np.random.SeedSequence(config.seed).spawn(3)[0].generate_state(1)[0])


def run_static(config: RunConfig, corpus: DomainCorpus | None = None, lm: TinyLMConfig | None = None,
               out_dir: str | Path | None = None, schedule: Sequence[np.ndarray] | None = None) -> RunResult:
    """Fixed weights every step, or a replayed per-step ``schedule`` when given."""
    corpus = corpus if corpus is not None else load_corpus_for(config)
    lm = lm if lm is not None else config.target
    out = Path(out_dir) if out_dir is not None else None
    if schedule is not None:
        policy: Policy = ScheduledWeights(schedule)
    else:
        policy = FixedWeights(resolve_weights(config.static_weights, corpus))
    try:
        result = _run_with_policy(config, corpus, lm, policy, out, _env_seed(config))
    except DivergenceError as e:
        _flush_divergence(out, config, corpus, e)
        raise
    if out is not None:
        _write_summary(out, _summary(config, corpus, result, lm))
    return result


def run_exp3(config: RunConfig, corpus: DomainCorpus | None = None, lm: TinyLMConfig | None = None,
             out_dir: str | Path | None = None) -> RunResult:
    corpus = corpus if corpus is not None else load_corpus_for(config)
    lm = lm if lm is not None else config.target
    out = Path(out_dir) if out_dir is not None else None
    policy = Exp3Mixer(corpus.k, config.exp3, lm.vocab_size)
    try:
        result = _run_with_policy(config, corpus, lm, policy, out, _env_seed(config))
    except DivergenceError as e:
        _flush_divergence(out, config, corpus, e)
        raise
    if out is not None:
        _write_summary(out, _summary(config, corpus, result, lm))
    return result


def run_with_actor(config: RunConfig, actor, corpus: DomainCorpus, lm: TinyLMConfig,
                   out_dir: str | Path | None = None) -> RunResult:
    """Stage 2 of transfer: train ``lm`` with the frozen actor choosing weights."""
    out = Path(out_dir) if out_dir is not None else None
    before = actor.params.checksum()
    try:
        result = _run_with_policy(config, corpus, lm, FrozenActor(actor), out, _env_seed(config))
    except DivergenceError as e:
        _flush_divergence(out, config, corpus, e)
        raise
    after = actor.params.checksum()
    if before != after:
        raise RuntimeError("actor parameters changed during transfer stage 2")
    result.actor_checksum = after
    if out is not None:
        _write_summary(out, _summary(config, corpus, result, lm))
    return result


def run_transfer(config: RunConfig, corpus: DomainCorpus | None = None,
                 out_dir: str | Path | None = None) -> tuple[RunResult | None, RunResult]:
    """Train the agent on the proxy LM, then train the target LM with the frozen actor."""
    corpus = corpus if corpus is not None else load_corpus_for(config)
    m_proxy = len(config.proxy.state_layer_indices)
    m_target = len(config.target.state_layer_indices)
    if m_proxy != m_target:
        raise ConfigError(
            f"proxy tracks {m_proxy} state layers but target tracks {m_target}; "
            "choose state_layer_indices so both produce the same count"
        )
    out = Path(out_dir) if out_dir is not None else None
    stage1 = None
    if config.actor_checkpoint:
        actor, m = load_net(config.actor_checkpoint)
        if m != m_target or actor.k != corpus.k:
            raise ConfigError(
                f"actor checkpoint was trained with k={actor.k}, m={m}; run has k={corpus.k}, m={m_target}"
            )
    else:
        stage1 = run_acodm(config, corpus, config.proxy, out / "proxy" if out is not None else None)
        actor = stage1.agent.actor_target
    stage2 = run_with_actor(config, actor, corpus, config.target, out)
    return stage1, stage2


def run(config: RunConfig, out_dir: str | Path | None = None) -> RunResult:
    config.validate()
    out_dir = out_dir if out_dir is not None else config.output_dir
    if config.mode == "ac-odm":
        return run_acodm(config, out_dir=out_dir)
    if config.mode == "transfer":
        return run_transfer(config, out_dir=out_dir)[1]
    if config.mode == "exp3":
        return run_exp3(config, out_dir=out_dir)
    return run_static(config, out_dir=out_dir)


# -- reporting ---------------------------------------------------------------


@dataclass
class RunCurve:
    name: str
    mode: str
    T: int
    corpus_digest: str
    steps: np.ndarray
    mean_val_loss: np.ndarray
    mean_val_ppl: np.ndarray


def read_curve(metrics_path: str | Path) -> RunCurve:
    path = Path(metrics_path)
    if path.is_dir():
        path = path / "metrics.csv"
    summary_path = path.parent / "summary.json"
    meta = json.loads(summary_path.read_text()) if summary_path.exists() else {}
    steps, loss, ppl = [], [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            if row["mean_val_loss"]:
                steps.append(int(row["step"]))
                loss.append(float(row["mean_val_loss"]))
                ppl.append(float(row["mean_val_ppl"]))
    return RunCurve(
        name=str(path.parent.name if path.name == "metrics.csv" else path.stem),
        mode=meta.get("mode", "?"), T=int(meta.get("T", steps[-1] if steps else 0)),
        corpus_digest=meta.get("corpus_digest", ""),
        steps=np.array(steps), mean_val_loss=np.array(loss), mean_val_ppl=np.array(ppl),
    )


def steps_to_threshold(curve: RunCurve, threshold: float) -> int | None:
    """First evaluated step whose mean validation loss is <= threshold (None if never)."""
    hit = np.nonzero(curve.mean_val_loss <= threshold)[0]
    return int(curve.steps[hit[0]]) if hit.size else None


@dataclass
class ReportRow:
    name: str
    mode: str
    steps_to_threshold: int | None
    final_mean_val_loss: float
    final_mean_val_ppl: float
    speedup: float | None


def compare_report(paths: Sequence[str | Path], baseline: int = 0,
                   threshold: float | None = None) -> tuple[list[ReportRow], float]:
    """Steps-to-threshold and speedup of each run relative to ``paths[baseline]``.

    The threshold defaults to the baseline's final mean validation loss.
    """
    if len(paths) < 2:
        raise ValueError("compare_report needs at least two metric files")
    curves = [read_curve(p) for p in paths]
    ref = curves[baseline]
    for c in curves:
        if c.corpus_digest != ref.corpus_digest:
            raise ValueError(f"corpus mismatch: {c.name} ({c.corpus_digest}) vs {ref.name} ({ref.corpus_digest})")
        if c.T != ref.T:
            raise ValueError(f"T mismatch: {c.name} has T={c.T}, {ref.name} has T={ref.T}")
    if threshold is None:
        threshold = float(ref.mean_val_loss[-1])
    ref_steps = steps_to_threshold(ref, threshold)
    rows = []
    for c in curves:
        st = steps_to_threshold(c, threshold)
        speed = ref_steps / st if (st and ref_steps) else None
        rows.append(ReportRow(c.name, c.mode, st, float(c.mean_val_loss[-1]),
                              float(c.mean_val_ppl[-1]), speed))
    return rows, threshold


def report_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "mode", "steps_to_threshold", "final_mean_val_loss",
                "final_mean_val_ppl", "speedup_vs_baseline"])
    for r in rows:
        w.writerow([r.name, r.mode,
                    r.steps_to_threshold if r.steps_to_threshold is not None else "not reached",
                    _fmt(r.final_mean_val_loss), _fmt(r.final_mean_val_ppl),
                    _fmt(r.speedup) if r.speedup is not None else ""])
    return buf.getvalue()


def report_table(rows: list[ReportRow], threshold: float) -> str:
    lines = [f"threshold (baseline final mean val loss): {threshold:.4f}",
             f"{'run':<24} {'mode':<9} {'steps':>12} {'loss':>8} {'ppl':>9} {'speedup':>8}"]
    for r in rows:
        st = str(r.steps_to_threshold) if r.steps_to_threshold is not None else "not reached"
        sp = f"{r.speedup:.3f}" if r.speedup is not None else "-"
        lines.append(f"{r.name:<24} {r.mode:<9} {st:>12} {r.final_mean_val_loss:>8.4f} "
                     f"{r.final_mean_val_ppl:>9.3f} {sp:>8}")
    return "\n".join(lines) + "\n"
