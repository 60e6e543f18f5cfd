"""Per-transition rewards and their percentile-clip + tanh normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TANH_CAP = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class RewardCoefficients:
    improvement: float = 1.0
    iteration_penalty: float = 0.1
    convergence_bonus: float = 1.0
    stuck_penalty: float = 0.05


DEFAULT_COEFFICIENTS = RewardCoefficients()


@dataclass(frozen=True)
class RewardStats:
    p1: float
    p99: float

    def __post_init__(self):
        if self.p1 > self.p99:
            raise ValueError("p1 must not exceed p99")


def raw_reward(prev_drvs: int, cur_drvs: int, converged_now: bool, drv0: int,
               coef: RewardCoefficients = DEFAULT_COEFFICIENTS) -> float:
    """Improvement bonus minus iteration penalty, plus convergence bonus, minus stuck penalty.

    Accepts DRV counts or anything with a ``total_drvs`` attribute.
    """
    prev = getattr(prev_drvs, "total_drvs", prev_drvs)
    cur = getattr(cur_drvs, "total_drvs", cur_drvs)
    if drv0 < 0:
        raise ValueError("drv0 must be >= 0")
    r = coef.improvement * (prev - cur) / max(1, drv0)
    r -= coef.iteration_penalty
    if converged_now:
        r += coef.convergence_bonus
    if cur >= prev and cur > 0:
        r -= coef.stuck_penalty
    return float(r)


def fit_reward_stats(raw_rewards) -> RewardStats:
    """1st/99th percentiles (linear interpolation); min/max below 100 samples."""
    r = np.asarray(raw_rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no rewards to fit")
    if r.size < 100:
        return RewardStats(float(r.min()), float(r.max()))
    p1, p99 = np.percentile(r, [1.0, 99.0])
    return RewardStats(float(p1), float(p99))


def normalize_reward(stats: RewardStats, r):
    """``tanh(clip(r, p1, p99))``, kept strictly inside (-1, 1)."""
    out = np.tanh(np.clip(np.asarray(r, dtype=np.float64), stats.p1, stats.p99))
    out = np.clip(out, -_TANH_CAP, _TANH_CAP)
    return float(out) if out.ndim == 0 else out
