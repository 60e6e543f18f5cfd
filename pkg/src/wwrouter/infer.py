"""Action bounds, the portable policy bundle, and per-iteration weight inference."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import Scaler, extract_features
from .grid import Design, StaticFeatures, static_features
from .nn import LOG_STD_MAX, LOG_STD_MIN, MLP, Actor
from .router import IterationState, WeightVector

FORMAT_VERSION = 1


class BundleError(ValueError):
    """Unreadable, truncated or incompatible policy bundle."""


@dataclass(frozen=True)
class ActionBounds:
    """Maps ``[0, 1]^4`` actions to weights: log2-scaled costs, linear decay."""

    drc_log2_max: float = 14.0
    marker_log2_max: float = 10.0
    fixed_log2_max: float = 10.0
    decay_min: float = 0.5
    decay_span: float = 0.49

    def denormalize(self, action) -> WeightVector:
        a = np.clip(np.asarray(action, dtype=np.float64), 0.0, 1.0)
        return WeightVector(
            float(2.0 ** (self.drc_log2_max * a[0])),
            float(2.0 ** (self.marker_log2_max * a[1])),
            float(2.0 ** (self.fixed_log2_max * a[2])),
            float(self.decay_min + self.decay_span * a[3]),
        )

    def normalize(self, w: WeightVector) -> np.ndarray:
        a = np.array(
            [
                math.log2(w.drc_cost) / self.drc_log2_max,
                math.log2(w.marker_cost) / self.marker_log2_max,
                math.log2(w.fixed_shape_cost) / self.fixed_log2_max,
                (w.marker_decay - self.decay_min) / self.decay_span,
            ]
        )
        return np.clip(a, 0.0, 1.0)

    def clamped(self, drc: float, marker: float, fixed: float, decay: float) -> WeightVector:
        """Weight vector from raw values forced into the bounds."""
        return WeightVector(
            min(max(drc, 1.0), 2.0**self.drc_log2_max),
            min(max(marker, 1.0), 2.0**self.marker_log2_max),
            min(max(fixed, 1.0), 2.0**self.fixed_log2_max),
            min(max(decay, self.decay_min), self.decay_min + self.decay_span),
        )

    def clamp(self, w: WeightVector) -> WeightVector:
        return self.clamped(*w.as_tuple())

    def contains(self, w: WeightVector) -> bool:
        return w == self.clamp(w)

    def to_dict(self) -> dict:
        return {
            "drc_log2_max": self.drc_log2_max,
            "marker_log2_max": self.marker_log2_max,
            "fixed_log2_max": self.fixed_log2_max,
            "decay_min": self.decay_min,
            "decay_span": self.decay_span,
        }


DEFAULT_BOUNDS = ActionBounds()


@dataclass
class PolicyBundle:
    actor: Actor
    scaler: Scaler
    bounds: ActionBounds = field(default_factory=ActionBounds)
    fingerprint: str = ""
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        layers = [self.actor.trunk, self.actor.mean_head, self.actor.log_std_head]
        return {
            "format_version": self.format_version,
            "scaler": self.scaler.to_dict(),
            "bounds": self.bounds.to_dict(),
            "actor": {
                "layer_dims": self.actor.trunk.dims + [self.actor.action_dim],
                "weights": [W.tolist() for m in layers for W in m.weights],
                "biases": [b.tolist() for m in layers for b in m.biases],
                "log_std_clamp": [LOG_STD_MIN, LOG_STD_MAX],
            },
            "fingerprint": self.fingerprint,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicyBundle":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise BundleError(f"unsupported bundle format_version {version!r} (expected {FORMAT_VERSION})")
        try:
            actor_doc = doc["actor"]
            W = actor_doc["weights"]
            b = actor_doc["biases"]
            n_trunk = len(W) - 2
            actor = Actor(
                MLP(W[:n_trunk], b[:n_trunk], relu_last=True),
                MLP([W[n_trunk]], [b[n_trunk]]),
                MLP([W[n_trunk + 1]], [b[n_trunk + 1]]),
            )
            if actor.trunk.dims + [actor.action_dim] != list(actor_doc["layer_dims"]):
                raise BundleError("actor layer_dims do not match stored weights")
            scaler = Scaler.from_dict(doc["scaler"])
            bounds = ActionBounds(**doc["bounds"])
            return cls(actor, scaler, bounds, str(doc.get("fingerprint", "")), version)
        except BundleError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise BundleError(f"corrupt bundle: {exc}") from exc


def save_bundle(bundle: PolicyBundle, path: str | Path) -> None:
    Path(path).write_text(bundle.dumps())


def load_bundle(path: str | Path) -> PolicyBundle:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BundleError(f"{path}: corrupt bundle file: {exc}") from exc
    if not isinstance(doc, dict):
        raise BundleError(f"{path}: corrupt bundle file")
    return PolicyBundle.from_dict(doc)


def infer_weights(bundle: PolicyBundle, prefix: Sequence[IterationState],
                  static: StaticFeatures) -> WeightVector:
    raw = extract_features(prefix, static)
    if raw.shape[0] != bundle.scaler.mean.shape[0]:
        raise ValueError(f"state has {raw.shape[0]} features, scaler expects {bundle.scaler.mean.shape[0]}")
    z = bundle.scaler.transform(raw)[None, :]
    action = bundle.actor.mean_action(z)[0]
    return bundle.bounds.denormalize(action)


class RLPolicy:
    """Weight policy for :func:`~wwrouter.router.run_flow` driven by a bundle.

    Iteration 0 has no observed state yet, so it uses ``first_weights``.
    """

    def __init__(self, bundle: PolicyBundle, design: Design, first_weights: WeightVector):
        self.bundle = bundle
        self.static = static_features(design)
        self.first_weights = first_weights
        self.log: list[WeightVector] = []

    def __call__(self, iteration: int, states: Sequence[IterationState]) -> WeightVector:
        if not states:
            w = self.first_weights
        else:
            w = infer_weights(self.bundle, states, self.static)
        self.log.append(w)
        return w
