import json
import os
import subprocess
import sys

import numpy as np
import pytest

from wwrouter import cli
from wwrouter.bench import WALL_CLOCK_COLUMNS, read_report, run_bench, write_report
from wwrouter.datagen import generate_corpus
from wwrouter.features import STATE_DIM, fit_scaler
from wwrouter.grid import Design, Net, load_design, save_design
from wwrouter.infer import DEFAULT_BOUNDS, PolicyBundle, infer_weights, load_bundle, save_bundle
from wwrouter.nn import Actor
from wwrouter.router import Trajectory


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(3, 21, "congested")


@pytest.fixture
def bundle():
    rng = np.random.default_rng(0)
    return PolicyBundle(Actor.init(rng, STATE_DIM, 4), fit_scaler(rng.normal(size=(30, STATE_DIM))),
                        DEFAULT_BOUNDS, "test")


def _write_corpus(d, designs):
    d.mkdir(parents=True, exist_ok=True)
    for x in designs:
        save_design(x, d / f"{x.name}.json")
    return d


def test_bench_report_arithmetic(tmp_path, corpus, bundle):
    rows = run_bench(corpus, bundle, repeat=3, max_iterations=30, workers=1)
    path = write_report(rows, tmp_path / "rep")
    table = read_report(path)
    body, total = table[:-1], table[-1]
    assert total["design"] == "TOTAL" and len(body) == len(corpus)
    for col in ("iters_base", "iters_ours", "drvs_base", "drvs_ours"):
        assert int(total[col]) == sum(int(r[col]) for r in body)
    for col in ("runtime_base_s", "runtime_ours_s", "wirelength_base_um", "wirelength_ours_um"):
        assert float(total[col]) == pytest.approx(sum(float(r[col]) for r in body), abs=1e-6)
    for r in table:
        for kind, base, ours in (("runtime", "runtime_base_s", "runtime_ours_s"),
                                 ("wirelength", "wirelength_base_um", "wirelength_ours_um")):
            b, o = float(r[base]), float(r[ours])
            assert float(r[f"{kind}_diff_pct"]) == pytest.approx((b - o) / b * 100, abs=0.006)
    for row in rows:
        curve = (tmp_path / "rep" / "curves" / f"{row.design}.csv").read_text().splitlines()
        assert curve[0] == "iteration,drvs_base,drvs_ours"
        assert len(curve) - 1 == max(row.base.iterations, row.ours.iterations)
        if row.base.drvs == 0:
            assert row.base.curve[-1] == 0


def test_bench_repeats_agree_except_runtime(tmp_path, corpus, bundle):
    a = write_report(run_bench(corpus[:1], bundle, repeat=1, max_iterations=30, workers=1), tmp_path / "a")
    b = write_report(run_bench(corpus[:1], bundle, repeat=4, max_iterations=30, workers=1), tmp_path / "b")
    strip = lambda rows: [{k: v for k, v in r.items() if k not in WALL_CLOCK_COLUMNS} for r in rows]
    assert strip(read_report(a)) == strip(read_report(b))


def test_bench_rejects_zero_repeat(corpus, bundle):
    with pytest.raises(ValueError):
        run_bench(corpus, bundle, repeat=0)


# -- CLI ----------------------------------------------------------------------------


def test_gen_designs_zero_count(tmp_path, capsys):
    assert cli.main(["gen-designs", "--out", str(tmp_path / "d"), "--count", "0", "--seed", "1"]) == 0
    assert list((tmp_path / "d").iterdir()) == []


def test_gen_designs_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert cli.main(["gen-designs", "--out", str(tmp_path / sub), "--count", "2", "--seed", "4",
                         "--profile", "congested"]) == 0
    fa = sorted((tmp_path / "a").iterdir())
    fb = sorted((tmp_path / "b").iterdir())
    assert [f.name for f in fa] == [f.name for f in fb] and len(fa) == 2
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(fa, fb))


def test_gen_designs_unwritable(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["gen-designs", "--out", str(blocker / "sub"), "--count", "1"]) == 1
    assert "error" in capsys.readouterr().err


def test_collect_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert cli.main(["collect", "--designs", str(tmp_path / "empty"), "--runs", "3", "--out",
                     str(tmp_path / "ds")]) == 1
    assert "no design files" in capsys.readouterr().err


def test_pipeline_commands(tmp_path, corpus, capsys):
    d = _write_corpus(tmp_path / "d", corpus[:2])
    assert cli.main(["collect", "--designs", str(d), "--runs", "10", "--seed", "2", "--out",
                     str(tmp_path / "ds"), "--max-iters", "20"]) == 0
    out = capsys.readouterr().out
    assert "runs=20" in out and "converged_fraction=" in out
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"cql": {"batch_size": 32}}))
    assert cli.main(["--config", str(cfg), "train", "--dataset", str(tmp_path / "ds"), "--out",
                     str(tmp_path / "b.json"), "--epochs", "2", "--seed", "0"]) == 0
    assert "stop_reason=" in capsys.readouterr().out
    metrics = (tmp_path / "b.json.metrics.tsv").read_text().splitlines()
    assert len(metrics) == 3
    assert cli.main(["bench", "--designs", str(d), "--policy", str(tmp_path / "b.json"), "--repeat", "2",
                     "--report", str(tmp_path / "rep"), "--max-iters", "20"]) == 0
    assert (tmp_path / "rep" / "report.csv").exists()


def test_train_too_small(tmp_path, corpus, capsys):
    d = _write_corpus(tmp_path / "d", corpus[:1])
    assert cli.main(["collect", "--designs", str(d), "--runs", "2", "--out", str(tmp_path / "ds"),
                     "--max-iters", "6"]) == 0
    assert cli.main(["train", "--dataset", str(tmp_path / "ds"), "--out", str(tmp_path / "b.json")]) == 1
    assert "fewer than one batch" in capsys.readouterr().err


def test_route_baseline_trivial(tmp_path, capsys):
    d = Design.build("triv", (1, 4, 4), [Net("a", ((0, 0, 0), (0, 0, 3)))])
    save_design(d, tmp_path / "t.json")
    out = tmp_path / "traj.jsonl"
    assert cli.main(["route", "--design", str(tmp_path / "t.json"), "--baseline", "--out", str(out)]) == 0
    line = capsys.readouterr().out
    assert "iterations=1" in line and "drvs=0" in line
    traj = Trajectory.loads(out.read_text())
    assert traj.converged and traj.iterations == 1


def test_route_policy_weight_log(tmp_path, corpus, bundle, capsys):
    save_design(corpus[0], tmp_path / "d.json")
    save_bundle(bundle, tmp_path / "b.json")
    out = tmp_path / "traj.jsonl"
    assert cli.main(["route", "--design", str(tmp_path / "d.json"), "--policy", str(tmp_path / "b.json"),
                     "--out", str(out), "--max-iters", "10"]) == 0
    traj = Trajectory.loads(out.read_text())
    rows = (tmp_path / "traj.jsonl.weights.tsv").read_text().splitlines()[1:]
    loaded = load_bundle(tmp_path / "b.json")
    assert len(rows) == traj.iterations
    for i, row in enumerate(rows[1:], start=1):
        vals = tuple(float(x) for x in row.split("\t")[1:])
        assert vals == infer_weights(loaded, traj.states[:i], traj.static).as_tuple()


def test_route_requires_mode(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["route", "--design", "x.json"])
    assert exc.value.code == 2


def test_route_unroutable(tmp_path, capsys):
    d = Design.build("boxed", (1, 3, 3), [Net("a", ((0, 0, 0), (0, 2, 2)))], obstacles=[(0, 0, 1), (0, 1, 0)])
    save_design(d, tmp_path / "u.json")
    code = cli.main(["route", "--design", str(tmp_path / "u.json"), "--baseline", "--out",
                     str(tmp_path / "u.jsonl")])
    assert code == 1
    assert "unreachable" in capsys.readouterr().err


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "wwrouter.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("gen-designs", "collect", "train", "route", "bench"):
        assert cmd in out.stdout
