"""Baseline vs. learned-policy benchmark and its delimited-text report."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import baseline_policy, run_all
from .grid import Design
from .infer import PolicyBundle, RLPolicy
from .router import DEFAULT_ROUTER_CONFIG, RouterConfig, run_flow

logger = logging.getLogger(__name__)

REPORT_FILE = "report.csv"
CURVES_DIR = "curves"
COLUMNS = [
    "design",
    "iters_base",
    "iters_ours",
    "runtime_base_s",
    "runtime_ours_s",
    "runtime_diff_pct",
    "drvs_base",
    "drvs_ours",
    "wirelength_base_um",
    "wirelength_ours_um",
    "wirelength_diff_pct",
]
WALL_CLOCK_COLUMNS = ("runtime_base_s", "runtime_ours_s", "runtime_diff_pct")


@dataclass(frozen=True)
class RunOutcome:
    iterations: int
    drvs: int
    wirelength_um: float
    runtime_s: float
    curve: tuple[int, ...]

    def deterministic_part(self):
        return (self.iterations, self.drvs, self.wirelength_um, self.curve)


@dataclass
class BenchRow:
    design: str
    base: RunOutcome
    ours: RunOutcome


def _bench_one(args) -> RunOutcome:
    design, bundle, max_iterations, router_cfg = args
    policy = baseline_policy if bundle is None else RLPolicy(bundle, design, baseline_policy(0))
    t0 = time.perf_counter()
    traj = run_flow(design, policy, max_iterations, router_cfg)
    elapsed = time.perf_counter() - t0
    last = traj.states[-1]
    return RunOutcome(
        traj.iterations,
        last.total_drvs,
        last.total_wirelength_um,
        elapsed,
        tuple(s.total_drvs for s in traj.states),
    )


def _merge(outcomes: Sequence[RunOutcome], label: str) -> RunOutcome:
    first = outcomes[0]
    for o in outcomes[1:]:
        if o.deterministic_part() != first.deterministic_part():
            raise RuntimeError(f"{label}: repeated runs disagree; the flow is not deterministic")
    mean_rt = float(np.mean([o.runtime_s for o in outcomes]))
    return RunOutcome(first.iterations, first.drvs, first.wirelength_um, mean_rt, first.curve)


def run_bench(
    designs: Sequence[Design],
    bundle: PolicyBundle,
    repeat: int = 10,
    max_iterations: int | None = None,
    router_cfg: RouterConfig = DEFAULT_ROUTER_CONFIG,
    workers: int | None = None,
) -> list[BenchRow]:
    """Route each design ``repeat`` times with the baseline and with ``bundle``.

    Runtime is the mean wall clock per flow, inference included; the other
    columns must agree across repeats.
    """
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    tasks = []
    for d in designs:
        for pol in (None, bundle):
            tasks.extend((d, pol, max_iterations, router_cfg) for _ in range(repeat))
    results = run_all(tasks, _bench_one, workers)
    rows = []
    for i, d in enumerate(designs):
        chunk = results[2 * i * repeat : 2 * (i + 1) * repeat]
        rows.append(BenchRow(d.name, _merge(chunk[:repeat], f"{d.name}/base"),
                             _merge(chunk[repeat:], f"{d.name}/ours")))
    return rows


# -- report --------------------------------------------------------------------------


def _fmt(x: float, digits: int) -> str:
    return f"{x:.{digits}f}"


def _diff(base: str, ours: str) -> str:
    b, o = float(base), float(ours)
    if b == 0:
        return "nan"
    return _fmt((b - o) / b * 100.0, 2)


def _cells(design, it_b, it_o, rt_b, rt_o, drv_b, drv_o, wl_b, wl_o) -> list[str]:
    rt_b, rt_o = _fmt(rt_b, 4), _fmt(rt_o, 4)
    wl_b, wl_o = _fmt(wl_b, 3), _fmt(wl_o, 3)
    return [design, str(it_b), str(it_o), rt_b, rt_o, _diff(rt_b, rt_o), str(drv_b), str(drv_o),
            wl_b, wl_o, _diff(wl_b, wl_o)]


def report_rows(rows: Sequence[BenchRow]) -> list[list[str]]:
    """Per-design rows followed by a ``TOTAL`` row of column sums.

    Diff columns are computed from the printed base/ours cells so they can be
    recomputed from the table itself.
    """
    out = [
        _cells(r.design, r.base.iterations, r.ours.iterations, r.base.runtime_s, r.ours.runtime_s,
               r.base.drvs, r.ours.drvs, r.base.wirelength_um, r.ours.wirelength_um)
        for r in rows
    ]
    def total(col: int) -> float:
        return sum(float(c[col]) for c in out)
    out.append(_cells("TOTAL", int(total(1)), int(total(2)), total(3), total(4),
                      int(total(6)), int(total(7)), total(8), total(9)))
    return out


def format_report(rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    w.writerows(report_rows(rows))
    return buf.getvalue()


def format_curve(row: BenchRow) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "drvs_base", "drvs_ours"])
    n = max(len(row.base.curve), len(row.ours.curve))
    for i in range(n):
        b = row.base.curve[i] if i < len(row.base.curve) else ""
        o = row.ours.curve[i] if i < len(row.ours.curve) else ""
        w.writerow([i, b, o])
    return buf.getvalue()


def write_report(rows: Sequence[BenchRow], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    (out / CURVES_DIR).mkdir(parents=True, exist_ok=True)
    (out / REPORT_FILE).write_text(format_report(rows))
    for r in rows:
        (out / CURVES_DIR / f"{r.design}.csv").write_text(format_curve(r))
    return out / REPORT_FILE


def read_report(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
