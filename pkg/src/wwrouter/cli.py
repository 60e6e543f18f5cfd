"""``wwrouter`` command line: corpus generation, data collection, training,
single-design routing and baseline-vs-policy benchmarking.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import kernels
from .bench import read_report, run_bench, write_report
from .config import ConfigError, load_config
from .cql import TrainingError, train, write_metrics
from .datagen import baseline_policy, collect, generate_corpus, load_dataset, save_dataset
from .grid import PROFILES, DesignError, load_design, save_design
from .infer import BundleError, RLPolicy, load_bundle, save_bundle
from .router import UnroutableError, run_flow

logger = logging.getLogger("wwrouter")


class CLIError(Exception):
    """Fatal, user-facing error; printed without a traceback."""


def _load_designs(directory: str):
    d = Path(directory)
    if not d.is_dir():
        raise CLIError(f"{directory}: not a directory")
    files = sorted(d.glob("*.json"))
    if not files:
        raise CLIError(f"{directory}: no design files")
    return [load_design(f) for f in files]


def cmd_gen_designs(args, cfg) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        designs = generate_corpus(args.count, args.seed, args.profile, router_cfg=cfg.router)
        for d in designs:
            save_design(d, out / f"{d.name}.json")
    except OSError as exc:
        raise CLIError(f"cannot write to {out}: {exc}") from exc
    print(f"wrote {len(designs)} {args.profile} designs to {out}")
    return 0


def cmd_collect(args, cfg) -> int:
    designs = _load_designs(args.designs)
    ds = collect(designs, args.runs, args.perturb_frac, seed=args.seed, max_iterations=args.max_iters,
                 router_cfg=cfg.router, coef=cfg.reward)
    save_dataset(ds, args.out)
    meta = ds.metadata
    frac = meta["converged_runs"] / meta["runs"] if meta["runs"] else 0.0
    print(f"runs={meta['runs']} transitions={len(ds)} converged_fraction={frac:.3f}")
    return 0


def cmd_train(args, cfg) -> int:
    ds = load_dataset(args.dataset)
    tcfg = cfg.cql
    if args.epochs is not None:
        tcfg = replace(tcfg, max_epochs=args.epochs)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    result = train(ds, tcfg)
    out = Path(args.out)
    save_bundle(result.bundle, out)
    metrics = out.with_name(out.name + ".metrics.tsv")
    write_metrics(result.history, metrics)
    print(f"stop_reason={result.stop_reason} epochs={len(result.history)} bundle={out} metrics={metrics}")
    return 0


def cmd_route(args, cfg) -> int:
    design = load_design(args.design)
    if args.baseline:
        policy = baseline_policy
        log = None
    else:
        policy = RLPolicy(load_bundle(args.policy), design, baseline_policy(0))
        log = policy.log
    traj = run_flow(design, policy, args.max_iters, cfg.router)
    out = Path(args.out) if args.out else Path(f"{design.name}.trajectory.jsonl")
    out.write_text(traj.dumps())
    weights_path = out.with_name(out.name + ".weights.tsv")
    rows = ["iteration\tdrc_cost\tmarker_cost\tfixed_shape_cost\tmarker_decay"]
    for s in traj.states:
        w = s.weights if log is None else log[s.iteration]
        rows.append("\t".join([str(s.iteration)] + [repr(x) for x in w.as_tuple()]))
    weights_path.write_text("\n".join(rows) + "\n")
    last = traj.states[-1]
    print(f"design={design.name} iterations={traj.iterations} converged={traj.converged} "
          f"drvs={last.total_drvs} wirelength_um={last.total_wirelength_um:.3f}")
    return 0


def cmd_bench(args, cfg) -> int:
    designs = _load_designs(args.designs)
    bundle = load_bundle(args.policy)
    rows = run_bench(designs, bundle, args.repeat, args.max_iters, cfg.router)
    path = write_report(rows, args.report)
    for r in read_report(path):
        if r["design"] == "TOTAL":
            print(f"iterations base={r['iters_base']} ours={r['iters_ours']} "
                  f"runtime_diff_pct={r['runtime_diff_pct']} drvs base={r['drvs_base']} ours={r['drvs_ours']}")
    print(f"report={path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wwrouter", description=__doc__)
    p.add_argument("--config", help="JSON config (reward, router, cql sections)")
    p.add_argument("--log-level", default="WARNING", help="logging level (default: %(default)s)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-designs", help="write a synthetic design corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--profile", choices=sorted(PROFILES), default="easy")
    g.set_defaults(func=cmd_gen_designs)

    c = sub.add_parser("collect", help="route designs under sampled weights and build a dataset")
    c.add_argument("--designs", required=True)
    c.add_argument("--runs", type=int, required=True, help="runs per design")
    c.add_argument("--perturb-frac", type=float, default=0.6)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.add_argument("--max-iters", type=int, default=None)
    c.set_defaults(func=cmd_collect)

    t = sub.add_parser("train", help="train a policy bundle with CQL")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("route", help="route one design")
    r.add_argument("--design", required=True)
    mode = r.add_mutually_exclusive_group(required=True)
    mode.add_argument("--policy", help="policy bundle")
    mode.add_argument("--baseline", action="store_true", help="use the baseline schedule")
    r.add_argument("--max-iters", type=int, default=64)
    r.add_argument("--out", help="trajectory file (default: <design>.trajectory.jsonl)")
    r.set_defaults(func=cmd_route)

    b = sub.add_parser("bench", help="compare baseline and policy")
    b.add_argument("--designs", required=True)
    b.add_argument("--policy", required=True)
    b.add_argument("--repeat", type=int, default=10)
    b.add_argument("--report", required=True)
    b.add_argument("--max-iters", type=int, default=64)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    logger.debug("A* backend: %s", kernels.BACKEND)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (CLIError, ConfigError, DesignError, BundleError, TrainingError, UnroutableError,
            FileNotFoundError, ValueError) as exc:
        print(f"wwrouter {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
