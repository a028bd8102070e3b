import csv
import io
import json
import math

import numpy as np
import pytest

from hmdiffuser import cli
from hmdiffuser import dataset as dsmod
from hmdiffuser.config import (ConfigError, ExperimentConfig, dump_config, load_config,
                               parse_config)
from hmdiffuser.diffusion import DiffusionModel
from hmdiffuser.harness import eval_tasks, mean_stderr, metrics_csv
from hmdiffuser.maze import all_pairs_distances, cell_of, load_layout
from hmdiffuser.rng import RngStream
from test_dataset import brute_force_coverage

TINY = """
# small settings so the whole pipeline runs in seconds
layout = mini
seed = 3
collect.transitions = 1500
stitch.c = 8
stitch.delta = 3.0
stitch.eps_dyn = 5.0
stitch.n = 4
diffusion.M = 6
diffusion.widths = 8, 16
diffusion.batch = 8
diffusion.stitcher_steps = 20
diffusion.planner_steps = 6
diffusion.flat_steps = 4
diffusion.save_every = 4
hierarchy.j = 1, 4
hierarchy.k = 4, 3
aux.depth_examples = 200
aux.hidden = 16
eval.seeds = 3
eval.max_steps = 15
eval.replan_period = 3
"""


def test_defaults_validate_and_round_trip():
    cfg = load_config()
    again = parse_config(dump_config(cfg))
    assert dump_config(again) == dump_config(cfg)
    assert cfg.hierarchy_spec().horizons == (5, 25, 50)


def test_parse_types_and_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text(TINY)
    cfg = load_config(path, {"hierarchy.strict": "false", "eval.task": "single"})
    assert cfg.diffusion.widths == (8, 16)
    assert cfg.stitch.delta == 3.0 and cfg.hierarchy.strict is False
    assert cfg.eval.task == "single"


@pytest.mark.parametrize("key, value, field", [
    ("stitch.delta", "0", "stitch.delta"),
    ("stitch.metric", "manhattan", "stitch.metric"),
    ("stitch.max_target_index", "9", "stitch.max_target_index"),
    ("eval.planner", "greedy", "eval.planner"),
    ("hierarchy.k", "4,4,2", "hierarchy"),
    ("collect.jitter", "0.7", "collect.jitter"),
    ("diffusion.M", "ten", "diffusion.M"),
    ("layout", "moon", "layout"),
    ("nosuch.key", "1", "nosuch.key"),
    ("stitch", "1", "stitch"),
])
def test_config_errors_name_the_field(key, value, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        load_config(None, {key: value})


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed 4\n")
    with pytest.raises(ConfigError, match="line 1"):
        load_config(bad)


def test_mean_stderr():
    # deviations from 4 are -3, -2, -1, 0, 6: sample variance 50 / 4, stderr sqrt(12.5 / 5)
    m, se = mean_stderr([1.0, 2.0, 3.0, 4.0, 10.0])
    assert m == 4.0
    assert se == pytest.approx(math.sqrt(2.5))
    assert np.isnan(mean_stderr([1.0])[1])


def test_eval_tasks_respect_distance():
    spec = load_layout("mini")
    dists = all_pairs_distances(spec)
    s, g = eval_tasks(spec, 20, "multi", RngStream(0, 9), min_cell_dist=3)
    for a, b in zip(s, g):
        assert dists[cell_of(spec, a)][cell_of(spec, b)] >= 3
        np.testing.assert_array_equal(a[2:], 0.0)
    s, g = eval_tasks(spec, 5, "single", RngStream(0, 9))
    assert all(cell_of(spec, x) == spec.task_goal_cell() for x in g)
    with pytest.raises(ConfigError):
        eval_tasks(spec, 1, "multi", RngStream(0), min_cell_dist=50)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "tiny.cfg"
    cfg.write_text(TINY)
    common = ["--config", str(cfg), "--out", str(out)]
    steps = [["collect"], ["train", "stitcher"], ["train", "invdyn"], ["train", "reward"],
             ["pte", "--strategy", "linear", "--rounds", "3", "--aggregate"],
             ["pte", "--strategy", "exponential", "--rounds", "2"],
             ["train", "planner"], ["train", "depth"], ["train", "flat"],
             ["eval", "--planner", "hmd"], ["eval", "--planner", "flat"],
             ["eval", "--planner", "hd", "--task", "single", "--seeds", "2"], ["report"]]
    for argv in steps:
        assert cli.main(argv[:1] + common + argv[1:]) == 0, argv
    return out, common


def test_pipeline_outputs(run_dir):
    out, _ = run_dir
    assert (out / "d0.pets").exists()
    for name in ("stitcher", "invdyn", "reward", "planner", "depth", "flat"):
        assert (out / "models" / name / "manifest.txt").exists()
    for r in (1, 2, 3):
        man = json.loads((out / "pte" / "linear" / f"round{r}.json").read_text())
        assert man["r"] == r and man["accepted"] >= 4
        assert len(dsmod.load(out / "pte" / "linear" / f"round{r}.pets")) == 4
    union = dsmod.load(out / "pte" / "linear" / "aggregate.pets")
    assert len(union) == len(dsmod.load(out / "d0.pets")) + 12
    report = json.loads((out / "eval" / "hmd-multi.json").read_text())
    assert report["seeds"] == 3 and len(report["per_seed"]) == 3
    assert report["min_cell_dist"] >= 2
    rows = list(csv.DictReader((out / "eval" / "flat-multi.csv").open()))
    assert len(rows) == 3
    single = json.loads((out / "eval" / "hd-single.json").read_text())
    assert single["seeds"] == 2
    summary = list(csv.DictReader((out / "summary.csv").open()))
    assert {r["name"] for r in summary} >= {"linear-r3", "exponential-r2", "hmd-multi", "flat-multi"}
    assert (out / "refs.txt").read_text().startswith("mini ")


def test_traces_respect_the_gate(run_dir):
    out, _ = run_dir
    for path in (out / "eval").glob("*.trace.jsonl"):
        for line in path.read_text().splitlines():
            rec = json.loads(line)
            assert not rec["pd"] or rec["gate"]


def test_pipeline_is_reproducible(run_dir, tmp_path):
    out, common = run_dir
    cfg = common[1]
    for argv in (["collect"], ["train", "invdyn"]):
        assert cli.main(argv[:1] + ["--config", cfg, "--out", str(tmp_path)] + argv[1:]) == 0
    assert (tmp_path / "d0.pets").read_bytes() == (out / "d0.pets").read_bytes()
    assert (tmp_path / "models/invdyn/params.bin").read_bytes() == \
        (out / "models/invdyn/params.bin").read_bytes()


def test_resumed_training_matches_uninterrupted(run_dir, tmp_path):
    out, common = run_dir
    cfg = common[1]
    base = ["--config", cfg, "--out", str(tmp_path)]
    assert cli.main(["collect"] + base) == 0
    assert cli.main(["train"] + base + ["flat", "--set", "diffusion.flat_steps=2"]) == 0
    assert cli.main(["train"] + base + ["flat", "--resume"]) == 0
    a = DiffusionModel.load(tmp_path / "models" / "flat")
    b = DiffusionModel.load(out / "models" / "flat")
    assert a.params.step == b.params.step == 4
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)


def test_metrics_command(run_dir, capsys):
    out, common = run_dir
    files = [str(out / "d0.pets"), str(out / "pte" / "linear" / "round3.pets")]
    assert cli.main(["metrics"] + common + files) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 2
    assert float(rows[1]["mean_length"]) > float(rows[0]["mean_length"])
    counts = [int(c) for c in rows[0]["histogram_counts"].split()]
    assert sum(counts) == int(rows[0]["trajectories"])
    assert metrics_csv(files[:1]).splitlines()[1].split(",")[1] == "mini"


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["collect", "--set", "stitch.delta=-1", "--out", str(tmp_path)]) == 2
    assert "stitch.delta" in capsys.readouterr().err
    assert cli.main(["collect", "--layout", "moon", "--out", str(tmp_path)]) == 2
    assert cli.main(["collect", "--set", "novalue", "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "wizard", "--out", str(tmp_path)]) == 2
    assert cli.main(["pte", "--out", str(tmp_path / "empty")]) == 3
    assert "run `collect` first" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        cli.main(["eval", "--planner", "oracle"])
    assert info.value.code == 2


def test_pte_abort_exit_code(run_dir, tmp_path, capsys):
    out, common = run_dir
    args = ["pte"] + common + ["--set", "stitch.delta=0.000001", "--set", f"out={tmp_path}"]
    # reuse the trained models and base data from the main run
    (tmp_path / "models").symlink_to(out / "models")
    (tmp_path / "d0.pets").symlink_to(out / "d0.pets")
    assert cli.main(args) == 3
    err = capsys.readouterr().err
    assert "aborted" in err and "acceptance_rate" in err


def test_metrics_coverage_on_three_cell_toy(tmp_path):
    layout = tmp_path / "line.txt"
    layout.write_text("#####\n#...#\n#####\n")
    spec = load_layout(f"custom:{layout}")
    walk = dsmod.Trajectory(np.array([[1.5, 1.5, 0, 0], [2.5, 1.5, 0, 0], [3.5, 1.5, 0, 0]]),
                            np.zeros((2, 2)), np.zeros(2))
    path = dsmod.save(dsmod.TrajectoryDataset(spec.name, 4, 2, [walk]), tmp_path / "toy.pets")
    rows = list(csv.DictReader(io.StringIO(metrics_csv([str(path)]))))
    assert len(rows) == 1
    assert float(rows[0]["coverage"]) == 0.5 == brute_force_coverage([walk], spec)
