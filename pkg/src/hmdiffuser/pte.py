"""Progressive trajectory extension: grow short trajectories by stitching.

Each iteration takes a source trajectory, samples a short bridge from its
last state with the stitcher, keeps the candidate targets that pass close to
the bridge, picks one at random, resamples the bridge so it ends on the
target's prefix, and concatenates source, bridge and target. Actions and
rewards on the new transitions come from the inverse-dynamics and reward
models.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .aux_models import InverseDynModel, RewardModel, infer_action, predict_reward
from .dataset import (Trajectory, TrajectoryDataset, DatasetError, mean_length,
                      start_goal_coverage)
from .diffusion import (Constraint, DenoiserSpec, DiffusionModel, TrainConfig, WindowSampler,
                        make_schedule, sample_window, train)
from .maze import MazeSpec, in_free_space
from .nn import Normalizer
from .rng import RngStream


class StitchError(ValueError):
    pass


class StitchMiss(Exception):
    """No candidate target was reachable from the bridge."""


class StitchReject(Exception):
    """The stitched trajectory broke the continuity bound or left free space."""


class PTEAbort(RuntimeError):
    def __init__(self, message: str, manifest: dict):
        super().__init__(message)
        self.manifest = manifest


METRICS = ("euclidean", "cosine")


@dataclass
class StitchConfig:
    c: int = 32
    delta: float = 1.0
    metric: str = "euclidean"
    horizon: int = 8
    n: int = 500
    eps_dyn: float = 0.3
    position_dims: int = 2
    max_target_index: int | None = None
    batch: int = 64
    min_attempts: int = 200
    acceptance_floor: float = 0.01
    max_attempts_factor: int = 50

    def __post_init__(self):
        if self.c < 1:
            raise StitchError("candidate count c must be >= 1")
        if not self.delta > 0:
            raise StitchError("reachability threshold delta must be > 0")
        if self.metric not in METRICS:
            raise StitchError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.horizon < 3:
            raise StitchError("stitcher horizon must be >= 3")
        if self.n < 1:
            raise StitchError("iterations per round N must be >= 1")
        if not self.eps_dyn > 0:
            raise StitchError("continuity bound eps_dyn must be > 0")
        if self.max_target_index is None:
            self.max_target_index = self.horizon - 2
        if not 0 <= self.max_target_index <= self.horizon - 2:
            raise StitchError(f"max_target_index must lie in 0..{self.horizon - 2}")


@dataclass
class RoundSpec:
    strategy: str
    r: int
    source: TrajectoryDataset
    target: TrajectoryDataset

    def __post_init__(self):
        if self.strategy not in ("linear", "exponential"):
            raise StitchError(f"unknown strategy {self.strategy!r}")
        if self.r < 1:
            raise StitchError("round index must be >= 1")
        if self.strategy == "linear" and any(t.round != 0 for t in self.target):
            raise StitchError("linear rounds stitch onto the base (round 0) dataset only")
        if self.strategy == "exponential" and self.source is not self.target:
            raise StitchError("exponential rounds use the previous round as source and target")


@dataclass
class PTEModels:
    stitcher: DiffusionModel
    invdyn: InverseDynModel
    reward: RewardModel


def train_stitcher(base: TrajectoryDataset, horizon: int, cfg: TrainConfig, rng: RngStream,
                   widths=(32, 64, 128), M: int = 64, tail_prob: float = 0.5,
                   log=None) -> DiffusionModel:
    """Unconditional window model over ``horizon`` states of round-0 data."""
    trajs = [t.states for t in base if len(t) >= horizon]
    if not trajs:
        raise StitchError(f"no base trajectory has {horizon} states")
    norm = Normalizer.fit(np.concatenate([t.states for t in base]))
    spec = DenoiserSpec(base.state_dim, horizon, widths=widths, mask_input=True)
    model = DiffusionModel(spec, make_schedule(M), norm, rng=rng.child(0),
                           meta={"role": "stitcher", "window": horizon, "L": 1})
    sampler = WindowSampler(trajs, {1: (1, horizon - 1)}, norm, constrained=(0,),
                            level_conditioned=False, tail_prob=tail_prob)
    train(model, sampler, cfg, rng.child(1), log)
    return model


def _bridge_constraints(starts: np.ndarray, horizon: int, prefixes=None) -> Constraint:
    n, d = starts.shape
    mask = np.zeros((n, horizon), dtype=bool)
    values = np.zeros((n, horizon, d), dtype=np.float32)
    mask[:, 0] = True
    values[:, 0] = starts
    for i, pre in enumerate(prefixes or []):
        k = len(pre) - 1
        if k + 2 > horizon:
            raise StitchError(f"target prefix of {k + 1} states does not fit a bridge of {horizon}")
        mask[i, horizon - k - 1:] = True
        values[i, horizon - k - 1:] = pre
    return Constraint(mask, values)


def propose_bridge(stitcher: DiffusionModel, s_last, rng) -> np.ndarray:
    """Bridge window(s) starting exactly at ``s_last``; one stream per row."""
    s_last = np.asarray(s_last, dtype=np.float32)
    single = s_last.ndim == 1
    starts = np.atleast_2d(s_last)
    rngs = [rng] if isinstance(rng, RngStream) else list(rng)
    out = sample_window(stitcher, _bridge_constraints(starts, stitcher.spec.window), rngs=rngs)
    return out[0] if single else out


def _pairwise(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    return 1.0 - (a @ b.T) / np.maximum(na * nb.T, 1e-12)


@dataclass
class Stitchable:
    index: int
    distance: float
    k: int
    bridge_index: int


def filter_candidates(bridge: np.ndarray, candidates: Sequence[Trajectory], delta: float,
                      metric: str = "euclidean", position_dims: int = 2,
                      max_target_index: int | None = None) -> list[Stitchable]:
    """Candidates whose closest (target state, bridge state) pair is within ``delta``.

    Only the first ``max_target_index + 1`` target states are searched so that
    the target prefix fits in a refined bridge. Ties in the target index go
    to the smaller index.
    """
    if not delta > 0:
        raise StitchError("delta must be > 0")
    if len(candidates) == 0:
        raise StitchError("no candidates given")
    b = np.asarray(bridge, dtype=np.float64)[:, :position_dims]
    out = []
    for i, cand in enumerate(candidates):
        t = cand.states if max_target_index is None else cand.states[:max_target_index + 1]
        d = _pairwise(np.asarray(t[:, :position_dims], dtype=np.float64), b, metric)
        flat = int(np.argmin(d))
        k, n = divmod(flat, d.shape[1])
        if d[k, n] <= delta:
            out.append(Stitchable(i, float(d[k, n]), k, n))
    return out


def select_target(stitchable: Sequence[Stitchable], rng: RngStream) -> Stitchable:
    if not stitchable:
        raise StitchMiss("no stitchable candidate")
    return stitchable[int(rng.integers(len(stitchable)))]


def refine_bridge(stitcher: DiffusionModel, s_last, prefix, rng) -> np.ndarray:
    """Bridge from ``s_last`` whose last ``len(prefix)`` states are ``prefix``."""
    horizon = stitcher.spec.window
    if len(prefix) + 1 > horizon:
        raise StitchError(f"target prefix of {len(prefix)} states does not fit a bridge of {horizon}")
    c = _bridge_constraints(np.atleast_2d(np.asarray(s_last, dtype=np.float32)), horizon,
                            [np.asarray(prefix, dtype=np.float32)])
    return sample_window(stitcher, c, rngs=[rng])[0]


def stitch(source: Trajectory, bridge: np.ndarray, target: Trajectory, k: int,
           invdyn: InverseDynModel, reward: RewardModel, eps_dyn: float,
           spec: MazeSpec | None = None, round_index: int | None = None,
           position_dims: int = 2) -> Trajectory:
    """Source, the bridge's free states, then the whole target.

    The bridge's first state is the source's last and its last ``k + 1``
    states are the target's first, so each appears once. Only the new
    transitions (source end through target start) get inferred actions and
    rewards.
    """
    h = len(bridge)
    if k + 2 > h:
        raise StitchError(f"k={k} too large for a bridge of {h} states")
    if not np.array_equal(bridge[0], source.states[-1]):
        raise StitchError("bridge does not start at the source's last state")
    if not np.array_equal(bridge[h - k - 1:], target.states[:k + 1]):
        raise StitchError("bridge does not end on the target prefix")
    middle = bridge[1:h - k - 1]
    path = np.concatenate([source.states[-1:], middle, target.states[:1]])
    steps = np.linalg.norm(np.diff(path[:, :position_dims], axis=0), axis=1)
    if np.any(steps > eps_dyn):
        raise StitchReject(f"bridge step of {steps.max():.3f} exceeds eps_dyn={eps_dyn}")
    if spec is not None and len(middle) and not in_free_space(spec, middle[:, :position_dims]).all():
        raise StitchReject("bridge leaves free space")
    actions = infer_action(invdyn, path[:-1], path[1:])
    rewards = predict_reward(reward, path[:-1], actions)
    states = np.concatenate([source.states, middle, target.states])
    join = len(source) - 1
    start_t = len(source) + len(middle)
    bounds = (list(source.boundaries) + [join, start_t]
              + [b + start_t for b in target.boundaries])
    r = round_index if round_index is not None else max(source.round, target.round) + 1
    return Trajectory(states,
                      np.concatenate([source.actions, actions, target.actions]),
                      np.concatenate([source.rewards, rewards, target.rewards]),
                      round=r, boundaries=tuple(bounds))


def _attempt_streams(rng: RngStream, i: int) -> dict[str, RngStream]:
    a = rng.child(i)
    return {"source": a.child(0), "bridge": a.child(1), "candidates": a.child(2),
            "select": a.child(3), "refine": a.child(4)}


def run_round(rs: RoundSpec, cfg: StitchConfig, models: PTEModels, rng: RngStream,
              spec: MazeSpec | None = None, seed: int | None = None, log=None) -> tuple[TrajectoryDataset, dict]:
    """Run attempts until ``cfg.n`` stitches are accepted; returns (dataset, manifest).

    Attempt ``i`` draws only from ``rng.child(i)`` and accepted stitches are
    kept in attempt order, so the result does not depend on ``cfg.batch``.
    """
    if len(rs.source) == 0 or len(rs.target) == 0:
        raise StitchError("source and target datasets must be nonempty")
    t0 = time.time()
    horizon = models.stitcher.spec.window
    if horizon != cfg.horizon:
        raise StitchError(f"stitcher window {horizon} != configured horizon {cfg.horizon}")
    sources, targets = rs.source.trajectories, rs.target.trajectories
    counts = {"accepted": 0, "miss": 0, "reject": 0, "attempts": 0}
    accepted: list[Trajectory] = []
    max_attempts = max(cfg.min_attempts, cfg.max_attempts_factor * cfg.n)
    manifest = {"strategy": rs.strategy, "r": rs.r, "N": cfg.n, "c": cfg.c, "delta": cfg.delta,
                "metric": cfg.metric, "H_b": horizon, "eps_dyn": cfg.eps_dyn, "seed": seed}
    i = 0
    while len(accepted) < cfg.n:
        n_try = cfg.batch
        streams = [_attempt_streams(rng, i + b) for b in range(n_try)]
        src = [sources[int(st["source"].integers(len(sources)))] for st in streams]
        bridges = propose_bridge(models.stitcher, np.stack([s.states[-1] for s in src]),
                                 [st["bridge"] for st in streams])
        plans = []
        for b, st in enumerate(streams):
            pick = st["candidates"].choice(len(targets), size=min(cfg.c, len(targets)),
                                           replace=len(targets) < cfg.c)
            cands = [targets[int(p)] for p in pick]
            ok = filter_candidates(bridges[b], cands, cfg.delta, cfg.metric, cfg.position_dims,
                                   cfg.max_target_index)
            try:
                chosen = select_target(ok, st["select"])
            except StitchMiss:
                plans.append(None)
                continue
            plans.append((cands[chosen.index], chosen.k))
        live = [b for b, p in enumerate(plans) if p is not None]
        refined = {}
        if live:
            starts = np.stack([src[b].states[-1] for b in live])
            prefixes = [plans[b][0].states[:plans[b][1] + 1] for b in live]
            out = sample_window(models.stitcher, _bridge_constraints(starts, horizon, prefixes),
                                rngs=[streams[b]["refine"] for b in live])
            refined = dict(zip(live, out))
        for b in range(n_try):
            counts["attempts"] += 1
            if plans[b] is None:
                counts["miss"] += 1
                continue
            target, k = plans[b]
            try:
                new = stitch(src[b], refined[b], target, k, models.invdyn, models.reward,
                             cfg.eps_dyn, spec, rs.r, cfg.position_dims)
            except StitchReject:
                counts["reject"] += 1
                continue
            counts["accepted"] += 1
            if len(accepted) < cfg.n:
                accepted.append(new)
        i += n_try
        rate = counts["accepted"] / counts["attempts"]
        if log:
            log(f"round {rs.r} ({rs.strategy}): {len(accepted)}/{cfg.n} accepted after "
                f"{counts['attempts']} attempts")
        if (counts["attempts"] >= cfg.min_attempts and rate < cfg.acceptance_floor) or \
                (counts["attempts"] >= max_attempts and len(accepted) < cfg.n):
            manifest.update(counts)
            manifest["acceptance_rate"] = rate
            raise PTEAbort(f"round {rs.r}: acceptance rate {rate:.4f} after "
                           f"{counts['attempts']} attempts", manifest)
    ds = TrajectoryDataset(rs.source.layout, rs.source.state_dim, rs.source.action_dim, accepted,
                           meta={"generator": f"pte-{rs.strategy}", "round": rs.r, "seed": seed})
    lengths = ds.lengths()
    manifest.update(counts)
    manifest.update({"acceptance_rate": counts["accepted"] / counts["attempts"],
                     "mean_length": float(lengths.mean()), "min_length": int(lengths.min()),
                     "max_length": int(lengths.max()),
                     "source_mean_length": mean_length(rs.source),
                     "wall_clock_s": round(time.time() - t0, 3)})
    if spec is not None:
        manifest["coverage"] = start_goal_coverage(ds, spec)
    return ds, manifest


def linear_pte(base: TrajectoryDataset, rounds: int, cfg: StitchConfig, models: PTEModels,
               rng: RngStream, spec: MazeSpec | None = None, seed=None, log=None):
    """D_r from source D_{r-1} and the fixed base as targets."""
    out, manifests = [], []
    prev = base
    for r in range(1, rounds + 1):
        ds, man = run_round(RoundSpec("linear", r, prev, base), cfg, models, rng.child(r), spec,
                            seed, log)
        out.append(ds)
        manifests.append(man)
        prev = ds
    return out, manifests


def exponential_pte(base: TrajectoryDataset, rounds: int, cfg: StitchConfig, models: PTEModels,
                    rng: RngStream, spec: MazeSpec | None = None, seed=None, log=None):
    """D_r with D_{r-1} as both source and target."""
    out, manifests = [], []
    prev = base
    for r in range(1, rounds + 1):
        ds, man = run_round(RoundSpec("exponential", r, prev, prev), cfg, models, rng.child(r),
                            spec, seed, log)
        out.append(ds)
        manifests.append(man)
        prev = ds
    return out, manifests
