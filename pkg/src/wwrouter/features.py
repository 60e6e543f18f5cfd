"""Fixed-size policy state vector and its standard scaler.

Layout (23 values):

====== ==========================================================
0-8    static design features (see :class:`~wwrouter.grid.StaticFeatures`)
9      total DRVs
10     max partition DRVs
11-12  mean / population std of partition DRVs
13-14  mean / max of neighbor DRVs
15     total wirelength (um)
16     DRVs per partition
17     DRV reduction rate vs. previous iteration (0 at iteration 0)
18     iteration index
19-21  log2 of drc, marker and fixed-shape cost used in that iteration
22     marker decay used in that iteration
====== ==========================================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import StaticFeatures
from .router import IterationState

STATE_DIM = 23


def extract_features(prefix: Sequence[IterationState], static: StaticFeatures) -> np.ndarray:
    if not prefix:
        raise ValueError("trajectory prefix is empty")
    cur = prefix[-1]
    parts = np.asarray(cur.partition_drvs, dtype=np.float64)
    neigh = np.asarray(cur.neighbor_drvs, dtype=np.float64)
    if len(prefix) > 1:
        prev = prefix[-2].total_drvs
        rate = (prev - cur.total_drvs) / max(1, prev)
    else:
        rate = 0.0
    w = cur.weights
    vec = static.as_list() + [
        float(cur.total_drvs),
        float(cur.max_partition_drv),
        float(parts.mean()),
        float(parts.std()),
        float(neigh.mean()),
        float(neigh.max()),
        float(cur.total_wirelength_um),
        cur.total_drvs / len(parts),
        float(rate),
        float(cur.iteration),
        math.log2(w.drc_cost),
        math.log2(w.marker_cost),
        math.log2(w.fixed_shape_cost),
        float(w.marker_decay),
    ]
    return np.asarray(vec, dtype=np.float64)


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[-1] != self.mean.shape[0]:
            raise ValueError(f"expected {self.mean.shape[0]} features, got {raw.shape[-1]}")
        return (raw - self.mean) / self.std

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        mean = np.asarray(d["mean"], dtype=np.float64)
        std = np.asarray(d["std"], dtype=np.float64)
        if mean.shape != std.shape or np.any(std <= 0):
            raise ValueError("invalid scaler")
        return cls(mean, std)


def fit_scaler(vectors) -> Scaler:
    """Population mean/std per column.

    Exactly constant columns get std 1 (and their value as mean); so does any
    column whose std underflows to zero.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a non-empty 2-D array of state vectors")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    constant = np.all(x == x[0], axis=0)
    std[constant | (std == 0)] = 1.0
    mean[constant] = x[0, constant]
    return Scaler(mean, std)


def transform(scaler: Scaler, raw) -> np.ndarray:
    return scaler.transform(raw)
