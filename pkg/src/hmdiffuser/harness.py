"""Experiment pipeline: collect, train, stitch, evaluate, summarize.

Every stage reads and writes files under the configured output directory:

    d0.pets                          base dataset
    models/<name>/                   checkpoints (stitcher, invdyn, reward, planner, flat, depth)
    pte/<strategy>/round<r>.pets     PTE rounds, with round<r>.json manifests
    eval/<planner>-<task>.json       evaluation reports (+ .csv, .trace.jsonl)
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dataset as dsmod
from .aux_models import (DepthPredictor, FitConfig, InverseDynModel, RewardModel, depth_corpus,
                         train_depth, train_invdyn, train_reward)
from .checkpoint import CheckpointError
from .config import ExperimentConfig
from .dataset import TrajectoryDataset, concat, length_histogram, mean_length, start_goal_coverage
from .diffusion import DiffusionModel, TrainConfig, WindowSampler, train
from .hierarchy import HierarchySpec, label_depth
from .maze import (ConfigError, MazeSpec, ReferenceReturns, all_pairs_distances,
                   compute_reference_returns, load_layout, load_references, make_state,
                   normalized_score, random_free_position, save_references)
from .planner import ControlConfig, EpisodeResult, control_episodes, train_planner, write_trace
from .pte import PTEModels, StitchConfig, exponential_pte, linear_pte, train_stitcher
from .rng import STREAMS, RngStream

MODELS = ("stitcher", "invdyn", "reward", "planner", "depth", "flat")


class PipelineError(RuntimeError):
    pass


def _log_default(msg: str) -> None:
    print(msg, flush=True)


def stream(cfg: ExperimentConfig, name: str) -> RngStream:
    return RngStream(cfg.seed, STREAMS[name])


def base_path(cfg: ExperimentConfig) -> Path:
    return cfg.out_dir() / "d0.pets"


def model_path(cfg: ExperimentConfig, name: str) -> Path:
    return cfg.out_dir() / "models" / name


def round_path(cfg: ExperimentConfig, strategy: str, r: int) -> Path:
    return cfg.out_dir() / "pte" / strategy / f"round{r}.pets"


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise PipelineError(f"missing {path}; run `{hint}` first")
    return path


def run_collect(cfg: ExperimentConfig, log=_log_default) -> Path:
    spec = load_layout(cfg.layout)
    c = cfg.collect
    ds = dsmod.collect_base(spec, c.transitions, c.max_cell_dist, stream(cfg, "collect"), c.jitter)
    ds.meta["seed"] = cfg.seed
    path = base_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    dsmod.save(ds, path)
    log(f"collected {len(ds)} trajectories, {ds.n_transitions()} transitions -> {path}")
    return path


def load_base(cfg: ExperimentConfig) -> TrajectoryDataset:
    return dsmod.load(_need(base_path(cfg), "collect"))


def load_rounds(cfg: ExperimentConfig, strategy: str, rounds: int) -> list[TrajectoryDataset]:
    return [dsmod.load(_need(round_path(cfg, strategy, r), f"pte --strategy {strategy}"))
            for r in range(1, rounds + 1)]


def stitch_config(cfg: ExperimentConfig) -> StitchConfig:
    s = cfg.stitch
    return StitchConfig(c=s.c, delta=s.delta, metric=s.metric, horizon=s.horizon, n=s.n,
                        eps_dyn=s.eps_dyn, max_target_index=s.max_target_index)


def _train_cfg(cfg: ExperimentConfig, steps: int) -> TrainConfig:
    d = cfg.diffusion
    return TrainConfig(steps=steps, batch=d.batch, lr=d.lr, log_every=max(steps // 10, 1))


def _resume_or_new(path: Path, make: Callable[[], DiffusionModel], resume: bool) -> DiffusionModel:
    if resume and (path / "manifest.txt").exists():
        return DiffusionModel.load(path)
    return make()


def _train_diffusion(model: DiffusionModel, sampler, tc: TrainConfig, rng: RngStream, path: Path,
                     save_every: int, log) -> DiffusionModel:
    """Train in chunks, checkpointing so an interrupted run can resume exactly."""
    target = tc.steps
    while model.params.step < target:
        chunk = min(target, (model.params.step // save_every + 1) * save_every)
        train(model, sampler, TrainConfig(chunk, tc.batch, tc.lr, tc.beta1, tc.beta2, tc.clip_norm,
                                          tc.log_every), rng, log)
        model.save(path)
    return model


def planner_corpus(cfg: ExperimentConfig) -> TrajectoryDataset:
    """Base data plus every linear PTE round."""
    return concat([load_base(cfg)] + load_rounds(cfg, "linear", cfg.stitch.rounds))


def run_train(cfg: ExperimentConfig, which: str, resume: bool = False, log=_log_default) -> Path:
    if which not in MODELS:
        raise ConfigError(f"unknown model {which!r}; choose from {', '.join(MODELS)}")
    path = model_path(cfg, which)
    path.parent.mkdir(parents=True, exist_ok=True)
    rng = stream(cfg, which)
    d = cfg.diffusion
    t0 = time.time()
    if which in ("invdyn", "reward"):
        base = load_base(cfg)
        fit = FitConfig(hidden=cfg.aux.hidden)
        if which == "invdyn":
            model = train_invdyn(base, cfg.aux.invdyn_epochs, rng, fit)
        else:
            model = train_reward(base, cfg.aux.reward_epochs, rng, fit)
        model.save(path)
    elif which == "depth":
        h = cfg.hierarchy_spec()
        corpus = planner_corpus(cfg)
        s0, sg, labels = depth_corpus(corpus, h, cfg.aux.depth_examples, rng.child(0))
        model = train_depth(s0, sg, labels, h, cfg.aux.depth_epochs, rng.child(1),
                            FitConfig(hidden=cfg.aux.hidden))
        model.save(path)
    elif which == "stitcher":
        base = load_base(cfg)
        tc = _train_cfg(cfg, d.stitcher_steps)

        def make():
            return train_stitcher(base, cfg.stitch.horizon, TrainConfig(0), rng, d.widths, d.M)

        model = _resume_or_new(path, make, resume)
        trajs = [t.states for t in base if len(t) >= cfg.stitch.horizon]
        sampler = WindowSampler(trajs, {1: (1, cfg.stitch.horizon - 1)}, model.normalizer,
                                constrained=(0,), level_conditioned=False, tail_prob=0.5)
        _train_diffusion(model, sampler, tc, rng.child(1), path, d.save_every, log)
    else:
        if which == "planner":
            h = cfg.hierarchy_spec()
            corpus = planner_corpus(cfg)
        else:
            h = HierarchySpec((1,), (d.flat_horizon,))
            corpus = load_base(cfg)
        steps = d.planner_steps if which == "planner" else d.flat_steps

        def make():
            return train_planner(corpus, h, TrainConfig(0), rng, d.widths, d.M)

        model = _resume_or_new(path, make, resume)
        sampler = WindowSampler([t.states for t in corpus], h.levels(), model.normalizer,
                                constrained=(0, -1), level_conditioned=h.L > 1)
        _train_diffusion(model, sampler, _train_cfg(cfg, steps), rng.child(1), path,
                         d.save_every, log)
        counts = sampler.level_counts
        (path / "levels.json").write_text(json.dumps({str(k): v for k, v in counts.items()}) + "\n")
    log(f"trained {which} in {time.time() - t0:.1f}s -> {path}")
    return path


def load_pte_models(cfg: ExperimentConfig) -> PTEModels:
    try:
        return PTEModels(DiffusionModel.load(_need(model_path(cfg, "stitcher"), "train stitcher")),
                         InverseDynModel.load(_need(model_path(cfg, "invdyn"), "train invdyn")),
                         RewardModel.load(_need(model_path(cfg, "reward"), "train reward")))
    except CheckpointError as exc:
        raise PipelineError(str(exc)) from None


def run_pte(cfg: ExperimentConfig, strategy: str, rounds: int, aggregate: bool = False,
            log=_log_default) -> list[Path]:
    spec = load_layout(cfg.layout)
    base = load_base(cfg)
    models = load_pte_models(cfg)
    fn = linear_pte if strategy == "linear" else exponential_pte
    datasets, manifests = fn(base, rounds, stitch_config(cfg), models, stream(cfg, "pte"), spec,
                             cfg.seed, log)
    paths = []
    for r, (ds, man) in enumerate(zip(datasets, manifests), 1):
        path = round_path(cfg, strategy, r)
        path.parent.mkdir(parents=True, exist_ok=True)
        dsmod.save(ds, path)
        path.with_suffix(".json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        paths.append(path)
        log(f"round {r}: mean length {man['mean_length']:.1f}, accepted {man['accepted']}/"
            f"{man['attempts']} -> {path}")
    if aggregate:
        union = concat([base] + datasets)
        path = cfg.out_dir() / "pte" / strategy / "aggregate.pets"
        dsmod.save(union, path)
        paths.append(path)
        log(f"aggregate of {len(union)} trajectories -> {path}")
    return paths


def base_reach_cells(ds: TrajectoryDataset, spec: MazeSpec) -> float:
    """Longest path travelled by any base trajectory, in cell sizes."""
    best = 0.0
    for t in ds:
        best = max(best, float(np.linalg.norm(np.diff(t.states[:, :2], axis=0), axis=1).sum()))
    return best / spec.cell_size


def eval_tasks(spec: MazeSpec, n: int, task: str, rng: RngStream, min_cell_dist: int = 0,
               jitter: float = 0.3):
    """Start states and goal positions; task ``i`` draws from ``rng.child(i)``."""
    dists = all_pairs_distances(spec)
    cells = spec.free_cells
    starts, goals = [], []
    for i in range(n):
        r = rng.child(i)
        if task == "single":
            g = spec.task_goal_cell()
            options = [c for c in cells if c != g and dists[g][c] >= max(min_cell_dist, 1)]
            if not options:
                raise ConfigError(f"no start cell at least {min_cell_dist} cells from the goal")
            s = options[int(r.integers(len(options)))]
        else:
            pairs = [(a, b) for a in cells for b in cells
                     if a != b and dists[a][b] >= max(min_cell_dist, 1)]
            if not pairs:
                raise ConfigError(f"no start/goal pair at least {min_cell_dist} cells apart")
            s, g = pairs[int(r.integers(len(pairs)))]
        starts.append(make_state(random_free_position(spec, s, r, jitter)))
        goals.append(random_free_position(spec, g, r, jitter))
    return np.array(starts, dtype=np.float32), np.array(goals)


@dataclass
class EvalReport:
    planner: str
    task: str
    layout: str
    seeds: int
    mean_score: float
    stderr: float
    success_rate: float
    success_stderr: float
    per_seed: list[dict] = field(default_factory=list)
    wall_clock_s: float = 0.0
    min_cell_dist: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return float(v.mean()) if len(v) else float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def references(cfg: ExperimentConfig, spec: MazeSpec) -> ReferenceReturns:
    path = cfg.out_dir() / "refs.txt"
    refs = load_references(path) if path.exists() else {}
    if spec.name not in refs:
        refs[spec.name] = compute_reference_returns(spec, stream(cfg, "refs"))
        path.parent.mkdir(parents=True, exist_ok=True)
        save_references(path, refs)
    return refs[spec.name]


def evaluate(spec: MazeSpec, model: DiffusionModel, hierarchy: HierarchySpec,
             invdyn: InverseDynModel, depth: DepthPredictor | None, planner: str, task: str,
             seeds: int, rng: RngStream, refs: ReferenceReturns, replan_period: int = 5,
             max_steps: int | None = None, min_cell_dist: int = 0,
             trace_path=None) -> tuple[EvalReport, list[EpisodeResult]]:
    t0 = time.time()
    starts, goals = eval_tasks(spec, seeds, task, rng.child(0), min_cell_dist)
    cc = ControlConfig(planner=planner, replan_period=replan_period, max_steps=max_steps)
    results = control_episodes(spec, model, hierarchy, invdyn, depth, cc, starts, goals,
                               [rng.child(1).child(i) for i in range(seeds)])
    scores = [normalized_score(r.total_return, spec, refs) for r in results]
    reached = [float(r.reached) for r in results]
    mean, se = mean_stderr(scores)
    sr, sr_se = mean_stderr(reached)
    per_seed = [{"seed": i, "score": s, "return": r.total_return, "steps": r.steps,
                 "reached": r.reached, "planner_calls": r.planner_calls,
                 "start": [float(v) for v in starts[i]], "goal": [float(v) for v in goals[i]]}
                for i, (s, r) in enumerate(zip(scores, results))]
    report = EvalReport(planner, task, spec.name, seeds, mean, se, sr, sr_se, per_seed,
                        round(time.time() - t0, 3), min_cell_dist)
    if trace_path is not None:
        write_trace(results, trace_path)
    return report, results


def run_eval(cfg: ExperimentConfig, planner: str, task: str, seeds: int,
             log=_log_default) -> EvalReport:
    spec = load_layout(cfg.layout)
    which = "flat" if planner == "flat" else "planner"
    try:
        model = DiffusionModel.load(_need(model_path(cfg, which), f"train {which}"))
        invdyn = InverseDynModel.load(_need(model_path(cfg, "invdyn"), "train invdyn"))
        depth = None
        if planner == "hmd":
            depth = DepthPredictor.load(_need(model_path(cfg, "depth"), "train depth"))
    except CheckpointError as exc:
        raise PipelineError(str(exc)) from None
    hierarchy = HierarchySpec.from_meta(model.meta["hierarchy"])
    min_dist = cfg.eval.min_cell_dist
    if min_dist == 0 and task == "multi":
        min_dist = int(math.floor(base_reach_cells(load_base(cfg), spec))) + 1
    out = cfg.out_dir() / "eval"
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{planner}-{task}"
    report, _ = evaluate(spec, model, hierarchy, invdyn, depth, planner, task, seeds,
                         stream(cfg, "eval"), references(cfg, spec), cfg.eval.replan_period,
                         cfg.eval.max_steps or None, min_dist,
                         trace_path=stem.with_suffix(".trace.jsonl"))
    stem.with_suffix(".json").write_text(report.to_json())
    with stem.with_suffix(".csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "score", "return", "steps", "reached", "planner_calls"])
        for row in report.per_seed:
            w.writerow([row["seed"], f"{row['score']:.6g}", row["return"], row["steps"],
                        int(row["reached"]), row["planner_calls"]])
    log(f"{planner}/{task}: score {report.mean_score:.1f} +- {report.stderr:.1f}, "
        f"success {report.success_rate:.2f} over {seeds} seeds -> {stem}.json")
    return report


def metrics_csv(paths: Sequence, spec: MazeSpec | None = None, bin_width: int = 25) -> str:
    """One row per dataset file: mean length, coverage and the length histogram."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["file", "layout", "trajectories", "transitions", "mean_length", "min_length",
                "max_length", "coverage", "histogram_edges", "histogram_counts"])
    for p in paths:
        ds = dsmod.load(p)
        lay = spec if spec is not None and spec.name == ds.layout else load_layout(ds.layout)
        lengths = ds.lengths()
        counts, edges = length_histogram(ds, bin_width)
        w.writerow([str(p), ds.layout, len(ds), ds.n_transitions(), f"{mean_length(ds):.6g}",
                    int(lengths.min()), int(lengths.max()),
                    f"{start_goal_coverage(ds, lay):.6g}",
                    " ".join(str(int(e)) for e in edges), " ".join(str(int(c)) for c in counts)])
    return buf.getvalue()


def run_report(cfg: ExperimentConfig, log=_log_default) -> Path:
    """Collect PTE manifests and evaluation reports into summary.csv / summary.json."""
    out = cfg.out_dir()
    rows = []
    for man in sorted((out / "pte").glob("*/round*.json")):
        if man.name.endswith(".meta.json"):
            continue
        m = json.loads(man.read_text())
        rows.append({"kind": "pte", "name": f"{m['strategy']}-r{m['r']}",
                     "value": m["mean_length"], "stderr": "", "extra": m.get("coverage", "")})
    for rep in sorted((out / "eval").glob("*.json")):
        m = json.loads(rep.read_text())
        rows.append({"kind": "eval", "name": f"{m['planner']}-{m['task']}",
                     "value": m["mean_score"], "stderr": m["stderr"], "extra": m["success_rate"]})
    if not rows:
        raise PipelineError(f"nothing to report under {out}")
    path = out / "summary.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["kind", "name", "value", "stderr", "extra"])
        w.writeheader()
        w.writerows(rows)
    (out / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    log(f"wrote {len(rows)} rows -> {path}")
    return path
