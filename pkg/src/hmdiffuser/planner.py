"""Recursive level-conditioned planning and the replanning control loop.

A single denoiser serves every level. A level-l window has k_l + 1 states
spaced j_l steps apart; planning samples the start level's window between
the current state and the goal, then refines each consecutive subgoal pair
with a window one level down, until level 1 gives a dense plan.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .aux_models import DepthPredictor, InverseDynModel, infer_action, predict_depth
from .dataset import TrajectoryDataset
from .diffusion import (Constraint, DenoiserSpec, DiffusionError, DiffusionModel, TrainConfig,
                        WindowSampler, make_schedule, sample_window, train)
from .hierarchy import HierarchyError, HierarchySpec, label_depth, validate_hierarchy
from .maze import MazeSpec, make_state, pd_control, pd_gate, step_batch
from .nn import Normalizer
from .rng import RngStream

__all__ = ["HierarchySpec", "validate_hierarchy", "label_depth", "PlanTree", "plan_batch",
           "plan_recursive", "plan_flat", "plan_fixed_hd", "select_start_level",
           "train_planner", "ControlConfig", "EpisodeResult", "control_episodes",
           "control_episode", "write_trace"]


def train_planner(ds: TrajectoryDataset, hierarchy: HierarchySpec, cfg: TrainConfig,
                  rng: RngStream, widths=(32, 64, 128), M: int = 64,
                  normalizer: Normalizer | None = None, log=None) -> DiffusionModel:
    """One denoiser for all levels; each batch is drawn from one level chosen uniformly."""
    trajs = [t.states for t in ds]
    norm = normalizer or Normalizer.fit(np.concatenate(trajs))
    spec = DenoiserSpec(ds.state_dim, hierarchy.window(hierarchy.L), widths=widths,
                        n_levels=hierarchy.L)
    model = DiffusionModel(spec, make_schedule(M), norm, rng=rng.child(0),
                           meta={"role": "planner", "hierarchy": hierarchy.to_meta(),
                                 "L": hierarchy.L})
    sampler = WindowSampler(trajs, hierarchy.levels(), norm, constrained=(0, -1),
                            level_conditioned=hierarchy.L > 1)
    missing = sorted(set(hierarchy.levels()) - set(sampler.levels))
    if missing:
        raise DiffusionError(f"no trajectory is long enough for levels {missing}")
    train(model, sampler, cfg, rng.child(1), log)
    model.level_counts = dict(sampler.level_counts)
    return model


def model_hierarchy(model: DiffusionModel) -> HierarchySpec:
    return HierarchySpec.from_meta(model.meta["hierarchy"])


@dataclass
class PlanTree:
    """Windows per level, each tagged with the index of the parent pair it refines."""

    start_level: int
    windows: dict[int, list[tuple[int, np.ndarray]]] = field(default_factory=dict)
    dense: np.ndarray | None = None

    def sequence(self, level: int) -> np.ndarray:
        """Level-``level`` subgoals in order, shared junction states once."""
        parts = [w for _, w in self.windows[level]]
        return np.concatenate([parts[0]] + [p[1:] for p in parts[1:]])


def _goal_state(goal) -> np.ndarray:
    goal = np.asarray(goal, dtype=np.float32)
    return goal if goal.shape[-1] == 4 else make_state(goal).astype(np.float32)


def plan_batch(model: DiffusionModel, hierarchy: HierarchySpec, starts: np.ndarray,
               goals: np.ndarray, levels: Sequence[int], rngs: Sequence[RngStream],
               first_only: bool = False) -> list[PlanTree]:
    """Plan for many (start, goal) tasks at once; goals may be positions only.

    Window streams are derived per task: the top window uses
    ``rng.child(0)`` and the refinement of pair ``t`` of a window with
    stream ``r`` uses ``r.child(t + 1)``, so results do not depend on how
    tasks are batched. With ``first_only`` only the first pair of each level
    is refined, which is all a replanning controller executes.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float32))
    goals = np.atleast_2d(np.asarray(goals, dtype=np.float32))
    n = len(starts)
    if goals.shape[1] < starts.shape[1]:
        # goal positions become zero-velocity goal states
        goals = np.concatenate([goals, np.zeros((n, starts.shape[1] - goals.shape[1]), np.float32)], 1)
    levels = [int(v) for v in levels]
    for lv in levels:
        if not 1 <= lv <= hierarchy.L:
            raise HierarchyError(f"start level {lv} outside 1..{hierarchy.L}")
    trees = [PlanTree(lv) for lv in levels]
    # pending[level] = list of (task, parent pair index, stream, first state, pinned state)
    pending: dict[int, list] = {lv: [] for lv in range(1, hierarchy.L + 1)}
    for i in range(n):
        pending[levels[i]].append((i, -1, rngs[i].child(0), starts[i], goals[i]))
    d = starts.shape[1]
    for lv in range(hierarchy.L, 0, -1):
        jobs = pending[lv]
        if not jobs:
            continue
        w = hierarchy.window(lv)
        top = [job[1] == -1 for job in jobs]
        pins = [w - 1 if is_top else hierarchy.pinned_index(lv) for is_top in top]
        mask = np.zeros((len(jobs), w), dtype=bool)
        values = np.zeros((len(jobs), w, d), dtype=np.float32)
        for r, (job, p) in enumerate(zip(jobs, pins)):
            mask[r, 0] = mask[r, p] = True
            values[r, 0], values[r, p] = job[3], job[4]
        out = sample_window(model, Constraint(mask, values), level=lv,
                            rngs=[job[2] for job in jobs])
        for r, (job, p) in enumerate(zip(jobs, pins)):
            task, parent, stream = job[0], job[1], job[2]
            window = out[r, :p + 1]
            trees[task].windows.setdefault(lv, []).append((parent, window))
            if lv == 1:
                continue
            pairs = 1 if first_only else len(window) - 1
            for t in range(pairs):
                pending[lv - 1].append((task, t, stream.child(t + 1), window[t], window[t + 1]))
    for tree in trees:
        tree.dense = tree.sequence(1)
    return trees


def plan_recursive(model: DiffusionModel, hierarchy: HierarchySpec, level: int, s0, sg,
                   rng: RngStream, first_only: bool = False) -> PlanTree:
    return plan_batch(model, hierarchy, np.asarray(s0)[None], _goal_state(sg)[None], [level],
                      [rng], first_only)[0]


def plan_fixed_hd(model: DiffusionModel, hierarchy: HierarchySpec, s0, sg, rng: RngStream,
                  first_only: bool = False) -> PlanTree:
    """Fixed-depth hierarchy: always starts at the top level."""
    return plan_recursive(model, hierarchy, hierarchy.L, s0, sg, rng, first_only)


def plan_flat(model: DiffusionModel, horizon: int, s0, sg, rng: RngStream) -> np.ndarray:
    """Dense plan of ``horizon + 1`` states between ``s0`` and ``sg``."""
    c = Constraint.at(horizon + 1, len(s0), {0: s0, horizon: _goal_state(sg)})
    return sample_window(model, c, level=1, rngs=[rng.child(0)])[0]


def select_start_level(depth: DepthPredictor | None, hierarchy: HierarchySpec, s0, sg,
                       app: bool = True):
    """APP start level, or the top level when pondering is off."""
    if not app or depth is None:
        n = len(np.atleast_2d(s0))
        return hierarchy.L if np.asarray(s0).ndim == 1 else np.full(n, hierarchy.L)
    return predict_depth(depth, s0, sg)


@dataclass
class ControlConfig:
    planner: str = "hmd"
    replan_period: int = 1
    gate_radius: float | None = None
    max_steps: int | None = None
    trace: bool = True

    def __post_init__(self):
        if self.planner not in ("flat", "hd", "hmd"):
            raise HierarchyError(f"planner must be flat, hd or hmd, got {self.planner!r}")
        if self.replan_period < 1:
            raise HierarchyError("replan period must be >= 1")


@dataclass
class EpisodeResult:
    total_return: float
    steps: int
    reached: bool
    planner_calls: int
    trace: list[dict] = field(default_factory=list)


def control_episodes(spec: MazeSpec, model: DiffusionModel, hierarchy: HierarchySpec,
                     invdyn: InverseDynModel, depth: DepthPredictor | None, cfg: ControlConfig,
                     starts: np.ndarray, goals: np.ndarray, rngs: Sequence[RngStream]) -> list[EpisodeResult]:
    """Run episodes in lockstep; each one only ever reads its own stream.

    At every step an episode within the gate radius of its goal acts with the
    PD controller. Otherwise it follows its current dense plan through the
    inverse-dynamics model, replanning when the plan is ``replan_period``
    steps old or used up.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float32))
    goals = np.atleast_2d(np.asarray(goals, dtype=np.float64))
    n = len(starts)
    radius = cfg.gate_radius if cfg.gate_radius is not None else spec.gate_radius
    T = cfg.max_steps if cfg.max_steps is not None else spec.max_steps
    states = starts.astype(np.float64).copy()
    goal_states = np.stack([_goal_state(g[:2]) for g in goals])
    returns = np.zeros(n)
    steps = np.zeros(n, dtype=int)
    calls = np.zeros(n, dtype=int)
    dist = np.linalg.norm(states[:, :2] - goals[:, :2], axis=1)
    done = dist <= spec.goal_radius
    reached = done.copy()
    returns[done] = 1.0
    plans: list[np.ndarray | None] = [None] * n
    age = np.zeros(n, dtype=int)
    active_level = np.zeros(n, dtype=int)
    traces: list[list[dict]] = [[] for _ in range(n)]
    for t in range(T):
        live = np.flatnonzero(~done)
        if len(live) == 0:
            break
        gate = np.array([bool(pd_gate(states[i], goals[i, :2], radius)) for i in live])
        need = [i for i, g in zip(live, gate) if not g and (
            plans[i] is None or age[i] >= cfg.replan_period or age[i] + 1 >= len(plans[i]))]
        if need:
            s0 = states[need].astype(np.float32)
            sg = goal_states[need]
            streams = [rngs[i].child(int(calls[i])) for i in need]
            if cfg.planner == "flat":
                lv = [1] * len(need)
            elif cfg.planner == "hd":
                lv = [hierarchy.L] * len(need)
            else:
                lv = list(np.atleast_1d(select_start_level(depth, hierarchy, s0, sg, True)))
            trees = plan_batch(model, hierarchy, s0, sg, lv, streams, first_only=True)
            for i, tree, level in zip(need, trees, lv):
                plans[i] = tree.dense
                age[i] = 0
                calls[i] += 1
                active_level[i] = level
        actions = np.zeros((len(live), 2))
        used_pd = np.zeros(len(live), dtype=bool)
        plan_rows = [r for r, g in enumerate(gate) if not g]
        for r, i in enumerate(live):
            if gate[r]:
                actions[r] = pd_control(states[i], goals[i, :2], spec.kp, spec.kd)
                used_pd[r] = True
        if plan_rows:
            idx = [live[r] for r in plan_rows]
            nxt = np.stack([plans[i][age[i] + 1] for i in idx])
            actions[plan_rows] = infer_action(invdyn, states[idx].astype(np.float32), nxt)
        new = step_batch(spec, states[live], actions)
        for r, i in enumerate(live):
            if cfg.trace:
                traces[i].append({"t": t, "state": [float(v) for v in states[i]],
                                  "action": [float(v) for v in actions[r]],
                                  "gate": bool(gate[r]), "pd": bool(used_pd[r]),
                                  "replan": bool(i in need),
                                  "level": int(active_level[i]) if not gate[r] else 0})
            age[i] += 1
        states[live] = new
        steps[live] += 1
        hit = np.linalg.norm(new[:, :2] - goals[live, :2], axis=1) <= spec.goal_radius
        returns[live[hit]] += 1.0
        done[live[hit]] = True
        reached[live[hit]] = True
    return [EpisodeResult(float(returns[i]), int(steps[i]), bool(reached[i]), int(calls[i]),
                          traces[i]) for i in range(n)]


def control_episode(spec: MazeSpec, model: DiffusionModel, hierarchy: HierarchySpec,
                    invdyn: InverseDynModel, depth: DepthPredictor | None, cfg: ControlConfig,
                    start, goal, rng: RngStream) -> EpisodeResult:
    start = np.asarray(start, dtype=np.float32)
    if start.shape[-1] == 2:
        start = make_state(start).astype(np.float32)
    return control_episodes(spec, model, hierarchy, invdyn, depth, cfg, start[None],
                            np.asarray(goal, dtype=np.float64)[None], [rng])[0]


def write_trace(results: Sequence[EpisodeResult], path, seeds: Sequence[int] | None = None) -> None:
    """JSON lines, one per step, tagged with the episode's seed index."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for e, res in enumerate(results):
            tag = seeds[e] if seeds is not None else e
            for rec in res.trace:
                fh.write(json.dumps({"episode": tag, **rec}) + "\n")
