"""Offline Conservative Q-Learning with twin critics and a fixed-temperature
squashed-Gaussian actor. Pure numpy, analytic gradients, seeded and
single-threaded so a run is a pure function of (dataset, config).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .datagen import TransitionDataset
from .features import STATE_DIM
from .infer import DEFAULT_BOUNDS, ActionBounds, PolicyBundle
from .nn import Actor, Critic, polyak_update
from .reward import normalize_reward

logger = logging.getLogger(__name__)

ACTION_DIM = 4

STOP_EXPLOSION = "explosion"
STOP_ACTION_DIFF = "action_diff"
STOP_CONVERGED = "converged"
STOP_MAX_EPOCHS = "max_epochs"


class TrainingError(RuntimeError):
    """Non-finite loss or an unusable dataset."""


@dataclass(frozen=True)
class CQLConfig:
    actor_lr: float = 1.0e-3
    critic_lr: float = 4.0e-3
    alpha: float = 0.8
    batch_size: int = 128
    temperature: float = 0.143298
    temperature_lr: float = 0.0
    tau: float = 1.97555e-3
    gamma: float = 0.99
    n_sampled_actions: int = 10
    hidden: tuple[int, ...] = (64, 64)
    max_epochs: int = 500
    seed: int = 0
    optimizer: str = "sgd"
    explosion_factor: float = 100.0
    explosion_warmup_epochs: int = 1
    action_diff_limit: float = 1.0
    convergence_variance: float = 0.01
    convergence_window: int = 3
    min_epochs: int = 400

    def __post_init__(self):
        if self.temperature_lr != 0.0:
            raise ValueError("learned temperature is not supported; temperature_lr must be 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        object.__setattr__(self, "hidden", tuple(self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CQLConfig":
        return cls(**d)


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray

    def __len__(self):
        return self.s.shape[0]


@dataclass
class CriticNoise:
    """Random draws for one critic update, fixed so losses are deterministic."""

    next_noise: np.ndarray  # (B, d) for a' ~ pi(.|s')
    uniform: np.ndarray  # (n, B, d) uniform actions
    policy_noise: np.ndarray  # (n, B, d) for actor samples at s

    @classmethod
    def draw(cls, rng, batch_size: int, n: int, dim: int = ACTION_DIM) -> "CriticNoise":
        return cls(
            rng.standard_normal((batch_size, dim)),
            rng.uniform(0.0, 1.0, size=(n, batch_size, dim)),
            rng.standard_normal((n, batch_size, dim)),
        )


@dataclass
class Nets:
    critics: list[Critic]
    targets: list[Critic]

    @classmethod
    def init(cls, rng, hidden=(64, 64)) -> "Nets":
        critics = [Critic.init(rng, STATE_DIM, ACTION_DIM, hidden) for _ in range(2)]
        return cls(critics, [c.copy() for c in critics])

    def q_min(self, s, a) -> np.ndarray:
        return np.minimum(self.critics[0](s, a), self.critics[1](s, a))


def _logsumexp(x, axis=0):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    return (m + np.log(s)).squeeze(axis), e / s


def critic_loss_and_grad(batch: Batch, nets: Nets, actor: Actor, cfg: CQLConfig, noise: CriticNoise):
    """Both critics' Bellman + conservative losses and their parameter gradients.

    Returns ``(total_loss, conservative_penalty, grads)`` where the penalty is
    the mean of the two critics' alpha-weighted conservative terms and
    ``grads[k]`` aligns with ``nets.critics[k].params()``.
    """
    B = len(batch)
    n = noise.uniform.shape[0]
    nxt = actor.sample(batch.s2, noise.next_noise)
    q_next = np.minimum(nets.targets[0](batch.s2, nxt.action), nets.targets[1](batch.s2, nxt.action))
    y = batch.r + cfg.gamma * (1.0 - batch.done) * (q_next - cfg.temperature * nxt.log_prob)

    sd, ad = batch.s.shape[1], batch.a.shape[1]
    s_rep = np.broadcast_to(batch.s, (n, B, sd)).reshape(n * B, sd)
    pol = actor.sample(s_rep, noise.policy_noise.reshape(n * B, ad))
    s_all = np.concatenate([batch.s, s_rep, s_rep], axis=0)
    a_all = np.concatenate([batch.a, noise.uniform.reshape(n * B, ad), pol.action], axis=0)
    # importance weights: uniform density on [0,1]^d is 1; dataset action unweighted
    log_w = np.concatenate([np.zeros(B * (n + 1)), pol.log_prob])

    total = 0.0
    penalties = []
    grads = []
    for critic in nets.critics:
        q_all, cache = critic.forward(s_all, a_all)
        q_data = q_all[:B]
        td = q_data - y
        bellman = 0.5 * float(np.mean(td * td))
        stacked = (q_all - log_w).reshape(2 * n + 1, B)
        lse, soft = _logsumexp(stacked, axis=0)
        gap = lse - q_data
        cons = cfg.alpha * float(np.mean(gap))
        total += bellman + cons
        penalties.append(cons)
        dq = (cfg.alpha / B) * soft.reshape(-1)
        dq[:B] += td / B - cfg.alpha / B
        g, _ = critic.backward(cache, dq)
        grads.append(g)
    if not math.isfinite(total):
        raise TrainingError(f"non-finite critic loss {total}")
    return total, float(np.mean(penalties)), grads


def actor_loss_and_grad(batch: Batch, nets: Nets, actor: Actor, cfg: CQLConfig, noise: np.ndarray):
    """``mean(temperature * log pi(a|s) - min_k Q_k(s, a))`` with reparameterized ``a``."""
    B = len(batch)
    smp = actor.sample(batch.s, noise)
    q = []
    caches = []
    for critic in nets.critics:
        qk, ck = critic.forward(batch.s, smp.action)
        q.append(qk)
        caches.append(ck)
    pick_second = q[1] < q[0]
    q_min = np.where(pick_second, q[1], q[0])
    loss = float(np.mean(cfg.temperature * smp.log_prob - q_min))
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite actor loss {loss}")
    d_action = np.zeros_like(smp.action)
    for k, critic in enumerate(nets.critics):
        mask = pick_second if k == 1 else ~pick_second
        _, da = critic.backward(caches[k], -mask.astype(np.float64) / B)
        d_action += da
    grads = actor.backward(smp, d_action, np.full(B, cfg.temperature / B))
    return loss, grads


def action_diff(states: np.ndarray, actions: np.ndarray, actor: Actor) -> float:
    if len(states) == 0:
        raise ValueError("empty dataset")
    diff = actor.mean_action(states) - actions
    return float(np.mean(np.sum(diff * diff, axis=1)))


def initial_state_value(initial_states: np.ndarray, nets: Nets, actor: Actor) -> float:
    if len(initial_states) == 0:
        raise ValueError("dataset has no initial states")
    return float(np.mean(nets.q_min(initial_states, actor.mean_action(initial_states))))


# -- stopping rules -----------------------------------------------------------------


def explosion_triggered(critic_losses, factor: float = 100.0, warmup: int = 1) -> bool:
    """Latest epoch loss exceeds ``factor`` times the minimum of the earlier epochs."""
    if len(critic_losses) <= warmup:
        return False
    return critic_losses[-1] > factor * min(critic_losses[:-1])


def converged_triggered(values, window: int = 3, threshold: float = 0.01) -> bool:
    if len(values) < window:
        return False
    return float(np.var(values[-window:])) < threshold


def action_diff_triggered(value: float, limit: float = 1.0) -> bool:
    return value > limit


# -- optimizer ---------------------------------------------------------------------


class _Optimizer:
    def __init__(self, params, lr: float, kind: str):
        self.params = params
        self.lr = lr
        self.kind = kind
        if kind == "adam":
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
            self.t = 0

    def step(self, grads) -> None:
        if self.kind == "sgd":
            for p, g in zip(self.params, grads):
                p -= self.lr * g
            return
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + eps)


# -- training loop -----------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    critic_loss: float
    actor_loss: float
    conservative_penalty: float
    initial_state_value: float
    action_diff: float
    stop_reason: str = ""


@dataclass
class TrainResult:
    bundle: PolicyBundle
    history: list[EpochMetrics]
    stop_reason: str
    step_penalties: list[float] = field(default_factory=list)
    nets: Nets | None = None
    actor: Actor | None = None


def prepare(dataset: TransitionDataset):
    """Scaled states and tanh-normalized rewards, ready for training."""
    S, A, R, S2, D, it = dataset.arrays()
    S = dataset.scaler.transform(S)
    S2 = dataset.scaler.transform(S2)
    R = normalize_reward(dataset.reward_stats, R)
    return S, A, np.asarray(R, dtype=np.float64), S2, D, it


def fingerprint(dataset: TransitionDataset, cfg: CQLConfig) -> str:
    h = hashlib.sha256()
    h.update(dataset.content_hash().encode())
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


def train(
    dataset: TransitionDataset,
    cfg: CQLConfig = CQLConfig(),
    bounds: ActionBounds = DEFAULT_BOUNDS,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> TrainResult:
    """Train until a stopping rule fires or ``cfg.max_epochs`` is reached.

    Stopping rules, checked after every epoch: critic-loss explosion, action
    divergence from the data, and a plateau of the initial-state value. On
    explosion or divergence the bundle from the previous epoch is returned.
    """
    S, A, R, S2, D, it = prepare(dataset)
    N = S.shape[0]
    if N < cfg.batch_size:
        raise TrainingError(f"dataset has {N} transitions, fewer than one batch of {cfg.batch_size}")
    init_states = S[it == 0]
    if len(init_states) == 0:
        raise TrainingError("dataset has no iteration-0 states")

    rng = np.random.default_rng(cfg.seed)
    actor = Actor.init(rng, STATE_DIM, ACTION_DIM, cfg.hidden)
    nets = Nets.init(rng, cfg.hidden)
    critic_opts = [_Optimizer(c.params(), cfg.critic_lr, cfg.optimizer) for c in nets.critics]
    actor_opt = _Optimizer(actor.params(), cfg.actor_lr, cfg.optimizer)

    history: list[EpochMetrics] = []
    step_penalties: list[float] = []
    kept = actor.copy()
    stop = STOP_MAX_EPOCHS
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(N)
        c_losses, a_losses, pens = [], [], []
        for start in range(0, N, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = Batch(S[idx], A[idx], R[idx], S2[idx], D[idx])
            noise = CriticNoise.draw(rng, len(idx), cfg.n_sampled_actions)
            c_loss, pen, c_grads = critic_loss_and_grad(batch, nets, actor, cfg, noise)
            for opt, g in zip(critic_opts, c_grads):
                opt.step(g)
            a_loss, a_grads = actor_loss_and_grad(batch, nets, actor, cfg, rng.standard_normal((len(idx), ACTION_DIM)))
            actor_opt.step(a_grads)
            for tgt, online in zip(nets.targets, nets.critics):
                polyak_update(tgt.params(), online.params(), cfg.tau)
            c_losses.append(c_loss)
            a_losses.append(a_loss)
            pens.append(pen)
        step_penalties.extend(pens)
        m = EpochMetrics(
            epoch,
            float(np.mean(c_losses)),
            float(np.mean(a_losses)),
            float(np.mean(pens)),
            initial_state_value(init_states, nets, actor),
            action_diff(S, A, actor),
        )
        history.append(m)
        losses = [h.critic_loss for h in history]
        if explosion_triggered(losses, cfg.explosion_factor, cfg.explosion_warmup_epochs):
            stop = STOP_EXPLOSION
        elif action_diff_triggered(m.action_diff, cfg.action_diff_limit):
            stop = STOP_ACTION_DIFF
        else:
            kept = actor.copy()
            if epoch + 1 >= cfg.min_epochs and converged_triggered(
                [h.initial_state_value for h in history], cfg.convergence_window, cfg.convergence_variance
            ):
                stop = STOP_CONVERGED
        if on_epoch is not None:
            on_epoch(m)
        if stop != STOP_MAX_EPOCHS:
            m.stop_reason = stop
            logger.info("stopping after epoch %d: %s", epoch, stop)
            break
    if history and not history[-1].stop_reason:
        history[-1].stop_reason = stop
    bundle = PolicyBundle(kept, dataset.scaler, bounds, fingerprint(dataset, cfg))
    return TrainResult(bundle, history, stop, step_penalties, nets, actor)


def write_metrics(history: list[EpochMetrics], path) -> None:
    cols = ["epoch", "critic_loss", "actor_loss", "conservative_penalty", "initial_state_value",
            "action_diff", "stop_reason"]
    lines = ["\t".join(cols)]
    for m in history:
        lines.append("\t".join([str(m.epoch)] + [repr(getattr(m, c)) for c in cols[1:6]] + [m.stop_reason]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
