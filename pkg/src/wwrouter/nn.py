"""Small numpy MLPs with hand-written backprop, plus the squashed-Gaussian actor.

Weights are stored ``(fan_in, fan_out)`` so a layer is ``x @ W + b``. Everything
is float64; gradient checks rely on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / math.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return W, b


class MLP:
    """Fully connected net; ReLU after every layer except (optionally) the last."""

    def __init__(self, weights, biases, relu_last: bool = False):
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.relu_last = relu_last
        for W, W2 in zip(self.weights, self.weights[1:]):
            if W.shape[1] != W2.shape[0]:
                raise ValueError("incompatible layer shapes")

    @classmethod
    def init(cls, rng, dims, relu_last: bool = False) -> "MLP":
        layers = [_init_layer(rng, a, b) for a, b in zip(dims, dims[1:])]
        return cls([W for W, _ in layers], [b for _, b in layers], relu_last)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MLP":
        return MLP([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.relu_last)

    def forward(self, x):
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last or self.relu_last:
                h = np.maximum(h, 0.0)
            cache.append(h)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dout):
        """Returns ``(grads, dx)``; ``grads`` aligns with :meth:`params`."""
        grads = [None] * (2 * len(self.weights))
        d = dout
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last or self.relu_last:
                d = d * (cache[i + 1] > 0)
            grads[2 * i] = cache[i].T @ d
            grads[2 * i + 1] = d.sum(axis=0)
            d = d @ self.weights[i].T
        return grads, d


class Critic:
    """Q(s, a) = MLP([s, a]) -> scalar."""

    def __init__(self, mlp: MLP, state_dim: int):
        self.mlp = mlp
        self.state_dim = state_dim

    @classmethod
    def init(cls, rng, state_dim: int, action_dim: int, hidden=(64, 64)) -> "Critic":
        return cls(MLP.init(rng, [state_dim + action_dim, *hidden, 1]), state_dim)

    def params(self):
        return self.mlp.params()

    def copy(self) -> "Critic":
        return Critic(self.mlp.copy(), self.state_dim)

    def forward(self, s, a):
        out, cache = self.mlp.forward(np.concatenate([s, a], axis=-1))
        return out[:, 0], cache

    def __call__(self, s, a):
        return self.forward(s, a)[0]

    def backward(self, cache, dq):
        """Gradient of ``sum(dq * Q)``: returns ``(param_grads, dQ/da)``."""
        grads, dx = self.mlp.backward(cache, dq[:, None])
        return grads, dx[:, self.state_dim :]


@dataclass
class ActorSample:
    action: np.ndarray
    log_prob: np.ndarray
    cache: tuple


class Actor:
    """Squashed Gaussian policy over ``[0, 1]^d``.

    A ReLU trunk feeds a mean head and a log-std head (clamped to
    [LOG_STD_MIN, LOG_STD_MAX]); ``a = (tanh(mean + std * noise) + 1) / 2``.
    """

    def __init__(self, trunk: MLP, mean_head: MLP, log_std_head: MLP):
        self.trunk = trunk
        self.mean_head = mean_head
        self.log_std_head = log_std_head

    @classmethod
    def init(cls, rng, state_dim: int, action_dim: int, hidden=(64, 64)) -> "Actor":
        trunk = MLP.init(rng, [state_dim, *hidden], relu_last=True)
        mean_head = MLP.init(rng, [hidden[-1], action_dim])
        log_std_head = MLP.init(rng, [hidden[-1], action_dim])
        return cls(trunk, mean_head, log_std_head)

    @property
    def action_dim(self) -> int:
        return self.mean_head.dims[-1]

    def params(self):
        return self.trunk.params() + self.mean_head.params() + self.log_std_head.params()

    def copy(self) -> "Actor":
        return Actor(self.trunk.copy(), self.mean_head.copy(), self.log_std_head.copy())

    def _heads(self, s):
        h, tcache = self.trunk.forward(s)
        mean, mcache = self.mean_head.forward(h)
        raw_ls, lcache = self.log_std_head.forward(h)
        log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, raw_ls, (tcache, mcache, lcache)

    def mean_action(self, s) -> np.ndarray:
        """Deterministic action used for inference and monitoring."""
        h = self.trunk(s)
        return 0.5 * (np.tanh(self.mean_head(h)) + 1.0)

    def sample(self, s, noise) -> ActorSample:
        """Reparameterized sample for standard-normal ``noise`` of shape ``(B, d)``."""
        mean, log_std, raw_ls, caches = self._heads(s)
        std = np.exp(log_std)
        z = mean + std * noise
        y = np.tanh(z)
        log_prob = squashed_log_prob(z, noise, log_std)
        return ActorSample(0.5 * (y + 1.0), log_prob, (caches, raw_ls, std, noise, y))

    def backward(self, sample: ActorSample, d_action, d_log_prob):
        """Parameter gradients of ``sum(d_action * a) + sum(d_log_prob * log_prob)``."""
        caches, raw_ls, std, noise, y = sample.cache
        tcache, mcache, lcache = caches
        dlp = d_log_prob[:, None]
        # d log_prob / dz = 2 tanh(z); da/dz = (1 - tanh^2 z) / 2
        dz = d_action * 0.5 * (1.0 - y * y) + dlp * 2.0 * y
        dmean = dz
        dlog_std = dz * std * noise - dlp
        dlog_std = dlog_std * ((raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX))
        gm, dhm = self.mean_head.backward(mcache, dmean)
        gl, dhl = self.log_std_head.backward(lcache, dlog_std)
        gt, _ = self.trunk.backward(tcache, dhm + dhl)
        return gt + gm + gl


def log1m_tanh_sq(z):
    """``log(1 - tanh(z)^2)`` without cancellation for large ``|z|``."""
    return 2.0 * (_LOG2 - z - np.logaddexp(0.0, -2.0 * z))


def squashed_log_prob(z, noise, log_std):
    """Log density of ``a = (tanh z + 1)/2`` with ``z = mean + exp(log_std) * noise``."""
    per_dim = -0.5 * noise * noise - log_std - _HALF_LOG_2PI - log1m_tanh_sq(z) + _LOG2
    return per_dim.sum(axis=-1)


def polyak_update(target_params, online_params, tau: float) -> None:
    """In place: ``target = tau * online + (1 - tau) * target``."""
    if len(target_params) != len(online_params):
        raise ValueError("parameter lists differ in length")
    for t, o in zip(target_params, online_params):
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch {t.shape} vs {o.shape}")
        t[...] = tau * o + (1.0 - tau) * t
