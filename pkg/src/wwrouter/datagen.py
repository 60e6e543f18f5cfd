"""Offline dataset generation: baseline schedule, perturbed and Sobol weight
sequences, routing runs, and transition records.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .features import STATE_DIM, Scaler, extract_features, fit_scaler
from .grid import PROFILES, Design, DesignError, generate_synthetic_design
from .infer import DEFAULT_BOUNDS, ActionBounds
from .reward import DEFAULT_COEFFICIENTS, RewardCoefficients, RewardStats, fit_reward_stats, raw_reward
from .router import DEFAULT_ROUTER_CONFIG, RouterConfig, Trajectory, UnroutableError, WeightVector, run_flow
from .sobol import sobol_point

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
EPS_MAX = 0.5
COST_LOG2_SPAN = 14.0
DECAY_SPAN = 0.49
META_FILE = "meta.json"
RECORDS_FILE = "transitions.jsonl"


def baseline_schedule(iteration: int) -> WeightVector:
    """Static iteration-indexed schedule the learned policy competes against."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    drc = float(min(8 * 2 ** min(iteration, 20), 16384))
    marker = 32.0 if iteration <= 2 else 128.0
    return WeightVector(drc, marker, 128.0, 0.95)


def baseline_policy(iteration: int, states=()) -> WeightVector:
    return baseline_schedule(iteration)


class PerturbedSequence:
    """Per-iteration weights jittered around the baseline schedule.

    The jitter scale grows linearly with the run index, from zero on the first
    run to ``eps_max`` on the last. Costs are scaled by ``2**(u*eps*14)`` and the
    decay shifted by ``u*eps*0.49`` with ``u ~ U[-1, 1]`` drawn independently per
    weight and iteration; results are clamped to the action bounds. Iteration 0
    is never perturbed.
    """

    def __init__(self, run_idx: int, total_perturb_runs: int, rng, eps_max: float = EPS_MAX,
                 bounds: ActionBounds = DEFAULT_BOUNDS):
        if not 0 <= run_idx < total_perturb_runs:
            raise ValueError("need 0 <= run_idx < total_perturb_runs")
        self.eps = 0.0 if total_perturb_runs == 1 else eps_max * run_idx / (total_perturb_runs - 1)
        self.rng = rng
        self.bounds = bounds
        self._draws: list[np.ndarray] = []

    def weights(self, iteration: int) -> WeightVector:
        base = baseline_schedule(iteration)
        if iteration == 0 or self.eps == 0.0:
            return base
        while len(self._draws) < iteration:
            self._draws.append(np.asarray(self.rng.uniform(-1.0, 1.0, size=4), dtype=np.float64))
        u = self._draws[iteration - 1]
        scale = self.eps * COST_LOG2_SPAN
        return self.bounds.clamped(
            base.drc_cost * 2.0 ** (u[0] * scale),
            base.marker_cost * 2.0 ** (u[1] * scale),
            base.fixed_shape_cost * 2.0 ** (u[2] * scale),
            base.marker_decay + u[3] * self.eps * DECAY_SPAN,
        )

    def __call__(self, iteration: int, states=()) -> WeightVector:
        return self.weights(iteration)


def perturbed_sequence(run_idx: int, total_perturb_runs: int, rng, **kw) -> PerturbedSequence:
    return PerturbedSequence(run_idx, total_perturb_runs, rng, **kw)


class ConstantAfterFirst:
    """Baseline weights on iteration 0, then one fixed weight vector."""

    def __init__(self, weights: WeightVector):
        self.weights = weights

    def __call__(self, iteration: int, states=()) -> WeightVector:
        return baseline_schedule(0) if iteration == 0 else self.weights


def sobol_weights(index: int, bounds: ActionBounds = DEFAULT_BOUNDS) -> WeightVector:
    return bounds.denormalize(sobol_point(index, 4))


# -- transitions and datasets -------------------------------------------------


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    design_name: str
    run_id: int
    iteration: int

    def to_dict(self) -> dict:
        return {
            "state": self.state.tolist(),
            "action": self.action.tolist(),
            "reward": self.reward,
            "next_state": self.next_state.tolist(),
            "done": self.done,
            "design_name": self.design_name,
            "run_id": self.run_id,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transition":
        return cls(
            np.asarray(d["state"], dtype=np.float64),
            np.asarray(d["action"], dtype=np.float64),
            float(d["reward"]),
            np.asarray(d["next_state"], dtype=np.float64),
            bool(d["done"]),
            str(d["design_name"]),
            int(d["run_id"]),
            int(d["iteration"]),
        )


def trajectory_transitions(traj: Trajectory, run_id: int, bounds: ActionBounds = DEFAULT_BOUNDS,
                           coef: RewardCoefficients = DEFAULT_COEFFICIENTS) -> list[Transition]:
    """One transition per ripup iteration: the state after iteration ``i - 1``,
    the weights used in iteration ``i``, and the state after iteration ``i``.

    ``Transition.iteration`` is the iteration index of ``state``, so iteration 0
    tags the initial routing state.
    """
    states = traj.states
    out = []
    if len(states) < 2:
        return out
    drv0 = states[0].total_drvs
    feats = [extract_features(states[: i + 1], traj.static) for i in range(len(states))]
    last = len(states) - 1
    for i in range(1, len(states)):
        prev, cur = states[i - 1], states[i]
        converged_now = cur.total_drvs == 0
        out.append(
            Transition(
                state=feats[i - 1],
                action=bounds.normalize(cur.weights),
                reward=raw_reward(prev.total_drvs, cur.total_drvs, converged_now, drv0, coef),
                next_state=feats[i],
                done=converged_now or i == last,
                design_name=traj.design_name,
                run_id=run_id,
                iteration=i - 1,
            )
        )
    return out


@dataclass
class TransitionDataset:
    transitions: list[Transition]
    scaler: Scaler
    reward_stats: RewardStats
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.transitions)

    def arrays(self):
        """Raw ``(S, A, R, S2, D, iteration)`` arrays."""
        t = self.transitions
        S = np.array([x.state for x in t], dtype=np.float64).reshape(-1, STATE_DIM)
        A = np.array([x.action for x in t], dtype=np.float64).reshape(-1, 4)
        R = np.array([x.reward for x in t], dtype=np.float64)
        S2 = np.array([x.next_state for x in t], dtype=np.float64).reshape(-1, STATE_DIM)
        D = np.array([x.done for x in t], dtype=np.float64)
        it = np.array([x.iteration for x in t], dtype=np.int64)
        return S, A, R, S2, D, it

    @classmethod
    def assemble(cls, transitions: list[Transition], metadata: dict | None = None) -> "TransitionDataset":
        if not transitions:
            raise ValueError("no transitions collected")
        states = [t.state for t in transitions] + [t.next_state for t in transitions]
        scaler = fit_scaler(states)
        stats = fit_reward_stats([t.reward for t in transitions])
        return cls(transitions, scaler, stats, dict(metadata or {}))

    def header(self) -> dict:
        meta = dict(self.metadata)
        meta.update(
            format_version=FORMAT_VERSION,
            num_transitions=len(self.transitions),
            scaler=self.scaler.to_dict(),
            reward_stats={"p1": self.reward_stats.p1, "p99": self.reward_stats.p99},
        )
        return meta

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.header(), sort_keys=True).encode())
        for t in self.transitions:
            h.update(json.dumps(t.to_dict(), sort_keys=True).encode())
        return h.hexdigest()


def save_dataset(ds: TransitionDataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / META_FILE).write_text(json.dumps(ds.header(), sort_keys=True, indent=1) + "\n")
    with open(out / RECORDS_FILE, "w") as fh:
        for t in ds.transitions:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")
    return out


def load_dataset(path: str | Path) -> TransitionDataset:
    path = Path(path)
    if path.is_file():
        path = path.parent
    meta = json.loads((path / META_FILE).read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format_version {meta.get('format_version')!r}")
    with open(path / RECORDS_FILE) as fh:
        transitions = [Transition.from_dict(json.loads(line)) for line in fh if line.strip()]
    scaler = Scaler.from_dict(meta.pop("scaler"))
    rs = meta.pop("reward_stats")
    meta.pop("format_version")
    meta.pop("num_transitions", None)
    return TransitionDataset(transitions, scaler, RewardStats(rs["p1"], rs["p99"]), meta)


# -- collection -------------------------------------------------------------------


@dataclass(frozen=True)
class RunSpec:
    design_idx: int
    run_id: int
    kind: str  # "perturb" or "sobol"
    perturb_idx: int
    perturb_total: int
    sobol_index: int
    seed: int


def plan_runs(num_designs: int, runs_per_design: int, perturb_fraction: float, seed: int) -> list[RunSpec]:
    if runs_per_design < 2:
        raise ValueError("runs_per_design must be >= 2")
    n_perturb = math.floor(perturb_fraction * runs_per_design)
    specs = []
    for d in range(num_designs):
        for r in range(runs_per_design):
            if r < n_perturb:
                specs.append(RunSpec(d, r, "perturb", r, n_perturb, 0, seed))
            else:
                specs.append(RunSpec(d, r, "sobol", 0, 0, r - n_perturb + 1, seed))
    return specs


def policy_for(spec: RunSpec, bounds: ActionBounds = DEFAULT_BOUNDS):
    if spec.kind == "perturb":
        rng = np.random.default_rng([spec.seed, spec.design_idx, spec.run_id])
        return PerturbedSequence(spec.perturb_idx, spec.perturb_total, rng, bounds=bounds)
    return ConstantAfterFirst(sobol_weights(spec.sobol_index, bounds))


def _execute(args):
    design, spec, max_iterations, router_cfg, bounds, coef = args
    try:
        traj = run_flow(design, policy_for(spec, bounds), max_iterations, router_cfg)
    except UnroutableError as exc:
        return spec, None, str(exc)
    return spec, traj, None


def worker_count() -> int:
    cap = os.environ.get("WWROUTER_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def run_all(tasks: Sequence, fn: Callable, workers: int | None = None) -> list:
    """Map ``fn`` over ``tasks``, in parallel when allowed; results keep task order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def corpus_hash(designs: Sequence[Design]) -> str:
    h = hashlib.sha256()
    for d in designs:
        h.update(d.dumps().encode())
    return h.hexdigest()


def collect(
    designs: Sequence[Design],
    runs_per_design: int,
    perturb_fraction: float = 0.6,
    seed: int = 0,
    max_iterations: int | None = None,
    router_cfg: RouterConfig = DEFAULT_ROUTER_CONFIG,
    bounds: ActionBounds = DEFAULT_BOUNDS,
    coef: RewardCoefficients = DEFAULT_COEFFICIENTS,
    workers: int | None = None,
) -> TransitionDataset:
    """Route every design ``runs_per_design`` times and assemble the transitions.

    The first ``floor(perturb_fraction * runs)`` runs per design follow
    perturbed baseline schedules; the rest hold one Sobol-sampled weight vector.
    """
    specs = plan_runs(len(designs), runs_per_design, perturb_fraction, seed)
    tasks = [(designs[s.design_idx], s, max_iterations, router_cfg, bounds, coef) for s in specs]
    results = run_all(tasks, _execute, workers)
    transitions: list[Transition] = []
    skipped: set[str] = set()
    runs = converged = 0
    iterations = []
    for spec, traj, err in results:
        name = designs[spec.design_idx].name
        if traj is None:
            if name not in skipped:
                logger.warning("skipping unroutable design %s: %s", name, err)
            skipped.add(name)
            continue
        runs += 1
        converged += traj.converged
        iterations.append(traj.iterations)
        transitions.extend(trajectory_transitions(traj, spec.run_id, bounds, coef))
    meta = {
        "corpus_hash": corpus_hash(designs),
        "designs": [d.name for d in designs],
        "skipped_designs": sorted(skipped),
        "seed": seed,
        "runs_per_design": runs_per_design,
        "perturb_fraction": perturb_fraction,
        "perturb_runs_per_design": math.floor(perturb_fraction * runs_per_design),
        "eps_max": EPS_MAX,
        "max_iterations": max_iterations if max_iterations is not None else router_cfg.max_iterations,
        "runs": runs,
        "converged_runs": converged,
        "mean_iterations": float(np.mean(iterations)) if iterations else 0.0,
        "reward_coefficients": coef.__dict__,
    }
    return TransitionDataset.assemble(transitions, meta)


# -- corpus ------------------------------------------------------------------------

CANDIDATE_STRIDE = 100_000


def generate_corpus(
    count: int,
    seed: int,
    profile: str = "easy",
    min_baseline_iterations: int = 5,
    baseline_cap: int = 40,
    max_candidates: int = 50,
    router_cfg: RouterConfig = DEFAULT_ROUTER_CONFIG,
) -> list[Design]:
    """``count`` designs of ``profile``, deterministic in ``seed``.

    Congested designs are rejection-sampled: a candidate is kept only when the
    baseline schedule needs at least ``min_baseline_iterations`` iterations and
    still converges within ``baseline_cap``.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    if count < 0:
        raise ValueError("count must be >= 0")
    cfg = PROFILES[profile]
    designs: list[Design] = []
    k = 0
    while len(designs) < count:
        if k >= max_candidates * max(1, count):
            raise DesignError(f"only {len(designs)} of {count} {profile} candidates passed the filter")
        name = f"{profile}_{seed}_{len(designs):03d}"
        cand = generate_synthetic_design(seed * CANDIDATE_STRIDE + k, replace(cfg, name=name))
        k += 1
        if profile == "congested":
            try:
                traj = run_flow(cand, baseline_policy, baseline_cap, router_cfg)
            except UnroutableError:
                continue
            if not (traj.converged and traj.iterations >= min_baseline_iterations):
                continue
        designs.append(cand)
    return designs
