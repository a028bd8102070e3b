"""Trajectory containers, base-data collection, persistence and corpus metrics."""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .maze import (ACTION_DIM, STATE_DIM, MazeSpec, WaypointFollower, all_pairs_distances,
                   cells_of, make_state, random_free_position, reward_of, step_scalar)

MAGIC = b"PETS"
VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass(eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    round: int = 0
    boundaries: tuple[int, ...] = ()

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float32)
        n = len(self.states)
        if n < 2:
            raise DatasetError(f"trajectory needs at least 2 states, got {n}")
        self.actions = np.asarray(self.actions, dtype=np.float32)
        self.rewards = np.asarray(self.rewards, dtype=np.float32).reshape(-1)
        self.boundaries = tuple(int(b) for b in self.boundaries)
        if self.actions.ndim != 2 or len(self.actions) != n - 1 or len(self.rewards) != n - 1:
            raise DatasetError(f"{n} states need {n - 1} actions and rewards, got "
                               f"{len(self.actions)} and {len(self.rewards)}")
        if (self.round == 0) != (len(self.boundaries) == 0):
            raise DatasetError("round 0 trajectories carry no stitch boundaries and vice versa")

    def __len__(self) -> int:
        return len(self.states)

    def equals(self, other: "Trajectory") -> bool:
        return (self.round == other.round and self.boundaries == other.boundaries
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.actions, other.actions)
                and np.array_equal(self.rewards, other.rewards))


@dataclass(eq=False)
class TrajectoryDataset:
    layout: str
    state_dim: int
    action_dim: int
    trajectories: list[Trajectory] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for t in self.trajectories:
            self._check(t)

    def _check(self, t: Trajectory) -> None:
        if t.states.shape[1] != self.state_dim or t.actions.shape[1] != self.action_dim:
            raise DatasetError(f"trajectory dims ({t.states.shape[1]}, {t.actions.shape[1]}) "
                               f"do not match dataset ({self.state_dim}, {self.action_dim})")

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i) -> Trajectory:
        return self.trajectories[i]

    def append(self, t: Trajectory) -> None:
        self._check(t)
        self.trajectories.append(t)

    def lengths(self) -> np.ndarray:
        return np.array([len(t) for t in self.trajectories], dtype=np.int64)

    def n_transitions(self) -> int:
        return int(sum(len(t) - 1 for t in self.trajectories))

    def equals(self, other: "TrajectoryDataset") -> bool:
        return (self.layout == other.layout and self.state_dim == other.state_dim
                and self.action_dim == other.action_dim and len(self) == len(other)
                and all(a.equals(b) for a, b in zip(self.trajectories, other.trajectories)))


def check_in_layout(ds: TrajectoryDataset, spec: MazeSpec) -> None:
    if ds.layout != spec.name:
        raise DatasetError(f"dataset is bound to layout {ds.layout!r}, not {spec.name!r}")


def collect_base(spec: MazeSpec, n_transitions: int, max_cell_dist: int, rng,
                 jitter: float = 0.3) -> TrajectoryDataset:
    """Roll out the BFS-waypoint expert between nearby start/goal cells.

    Start and goal cells are distinct and at most ``max_cell_dist`` apart
    along the maze (shortest path, which also bounds the Manhattan distance).
    Each rollout stops at the goal or after four times the time the path
    needs at top speed. Rewards are relative to the layout's task goal.
    """
    if n_transitions < 1:
        raise DatasetError("n_transitions must be >= 1")
    dists = all_pairs_distances(spec)
    partners = {}
    for cell, d in dists.items():
        near = [c for c in spec.free_cells if 1 <= d[c] <= max_cell_dist]
        if near:
            partners[cell] = near
    if not partners:
        raise DatasetError(f"no pair of distinct free cells within {max_cell_dist} cells")
    starts = sorted(partners)
    steps_per_cell = math.ceil(spec.cell_size / (spec.v_max * spec.dt))
    task_goal = spec.task_goal()
    ds = TrajectoryDataset(spec.name, STATE_DIM, ACTION_DIM,
                           meta={"generator": "collect_base", "max_cell_dist": max_cell_dist,
                                 "seed": getattr(rng, "seed", None)})
    total = 0
    while total < n_transitions:
        u = starts[int(rng.integers(len(starts)))]
        v = partners[u][int(rng.integers(len(partners[u])))]
        start = random_free_position(spec, u, rng, jitter)
        goal = random_free_position(spec, v, rng, jitter)
        follower = WaypointFollower(spec, start, goal)
        budget = 4 * int(dists[u][v]) * steps_per_cell
        s = make_state(start)
        states, actions = [s], []
        for _ in range(budget):
            a = follower(s)
            s = np.array(step_scalar(spec, s, a))
            actions.append(a)
            states.append(s)
            if np.linalg.norm(s[:2] - goal) <= spec.goal_radius:
                break
        states = np.array(states)
        rewards = reward_of(spec, states[1:], task_goal)
        ds.append(Trajectory(states, np.array(actions), rewards))
        total += len(actions)
    return ds


def split_segments(ds: TrajectoryDataset, seg_len: int) -> TrajectoryDataset:
    """Consecutive non-overlapping ``seg_len``-state pieces; remainders dropped."""
    if seg_len < 2:
        raise DatasetError("seg_len must be >= 2")
    out = TrajectoryDataset(ds.layout, ds.state_dim, ds.action_dim,
                            meta={**ds.meta, "split_segments": seg_len})
    for t in ds:
        for start in range(0, len(t) - seg_len + 1, seg_len):
            sl = slice(start, start + seg_len)
            out.append(Trajectory(t.states[sl], t.actions[start:start + seg_len - 1],
                                  t.rewards[start:start + seg_len - 1]))
    return out


def mean_length(ds: TrajectoryDataset) -> float:
    if len(ds) == 0:
        raise DatasetError("mean_length of an empty dataset")
    return float(np.mean(ds.lengths()))


def _cell_sequence(spec: MazeSpec, states: np.ndarray, index: np.ndarray) -> np.ndarray:
    rc = cells_of(spec, np.clip(states[:, :2], 0, [spec.width, spec.height]))
    ids = index[rc[:, 0], rc[:, 1]]
    ids = ids[ids >= 0]
    if len(ids) == 0:
        return ids
    keep = np.concatenate([[True], ids[1:] != ids[:-1]])
    return ids[keep]


def coverage_matrix(trajectories: Iterable[Trajectory], spec: MazeSpec) -> np.ndarray:
    """Boolean (F, F) matrix: [u, v] set if some trajectory visits u then later v."""
    free = spec.free_cells
    index = np.full(spec.grid.shape, -1, dtype=np.int64)
    for i, (r, c) in enumerate(free):
        index[r, c] = i
    n = len(free)
    covered = np.zeros((n, n), dtype=bool)
    for t in trajectories:
        seen = np.zeros(n, dtype=bool)
        for v in _cell_sequence(spec, t.states, index):
            covered[:, v] |= seen
            seen[v] = True
    np.fill_diagonal(covered, False)
    return covered


def start_goal_coverage(ds: TrajectoryDataset, spec: MazeSpec) -> float:
    """Fraction of ordered distinct free-cell pairs (u, v) joined in time order."""
    check_in_layout(ds, spec)
    n = len(spec.free_cells)
    return float(coverage_matrix(ds, spec).sum()) / (n * (n - 1))


def concat(datasets: Sequence[TrajectoryDataset]) -> TrajectoryDataset:
    if not datasets:
        raise DatasetError("concat needs at least one dataset")
    first = datasets[0]
    for d in datasets[1:]:
        if (d.state_dim, d.action_dim) != (first.state_dim, first.action_dim):
            raise DatasetError("concat: state/action dimensions differ")
        if d.layout != first.layout:
            raise DatasetError(f"concat: layouts differ ({first.layout!r} vs {d.layout!r})")
    trajs = [t for d in datasets for t in d]
    sources = [d.meta for d in datasets]
    return TrajectoryDataset(first.layout, first.state_dim, first.action_dim, trajs,
                             meta={"generator": "concat", "sources": sources})


def length_histogram(ds: TrajectoryDataset, bin_width: int = 25) -> tuple[np.ndarray, np.ndarray]:
    lengths = ds.lengths()
    top = int(lengths.max()) if len(lengths) else 0
    edges = np.arange(0, top + bin_width + 1, bin_width)
    counts, _ = np.histogram(lengths, bins=edges)
    return counts, edges


# binary persistence

def to_bytes(ds: TrajectoryDataset) -> bytes:
    name = ds.layout.encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<H", len(name)), name,
             struct.pack("<IIQ", ds.state_dim, ds.action_dim, len(ds))]
    for t in ds:
        parts.append(struct.pack("<IHI", len(t), t.round, len(t.boundaries)))
        parts.append(np.asarray(t.boundaries, dtype="<u4").tobytes())
        parts.append(np.ascontiguousarray(t.states, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(t.actions, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(t.rewards, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DatasetError("truncated dataset file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def from_bytes(buf: bytes) -> TrajectoryDataset:
    if len(buf) < 4 + 2 + 2 + 16 + 4:
        raise DatasetError("truncated dataset file")
    if buf[:4] != MAGIC:
        raise DatasetError(f"bad magic {buf[:4]!r}; not a trajectory dataset")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise DatasetError("checksum mismatch; file is corrupted")
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise DatasetError(f"unsupported dataset version {version}")
    (name_len,) = r.unpack("<H")
    layout = r.take(name_len).decode("utf-8")
    d_s, d_a, count = r.unpack("<IIQ")
    trajs = []
    for _ in range(count):
        n, rnd, nb = r.unpack("<IHI")
        bounds = tuple(int(b) for b in np.frombuffer(r.take(4 * nb), dtype="<u4"))
        states = r.floats(n * d_s).reshape(n, d_s)
        actions = r.floats((n - 1) * d_a).reshape(n - 1, d_a)
        rewards = r.floats(n - 1)
        trajs.append(Trajectory(states, actions, rewards, rnd, bounds))
    if r.pos != len(body):
        raise DatasetError("trailing bytes after last trajectory")
    return TrajectoryDataset(layout, d_s, d_a, trajs)


def save(ds: TrajectoryDataset, path) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(ds))
    if ds.meta:
        Path(str(path) + ".meta.json").write_text(json.dumps(ds.meta, sort_keys=True, default=str))
    return path


def load(path) -> TrajectoryDataset:
    path = Path(path)
    ds = from_bytes(path.read_bytes())
    side = Path(str(path) + ".meta.json")
    if side.exists():
        ds.meta = json.loads(side.read_text())
    return ds


def export_jsonl(ds: TrajectoryDataset, path) -> None:
    # float32 -> Python float is exact, so the export is lossless
    with open(path, "w") as fh:
        for t in ds:
            fh.write(json.dumps({
                "round": t.round, "boundaries": list(t.boundaries),
                "states": t.states.astype(np.float64).tolist(),
                "actions": t.actions.astype(np.float64).tolist(),
                "rewards": t.rewards.astype(np.float64).tolist(),
            }) + "\n")


def import_jsonl(path, layout: str) -> TrajectoryDataset:
    trajs = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            trajs.append(Trajectory(np.array(rec["states"]), np.array(rec["actions"]),
                                    np.array(rec["rewards"]), rec["round"], rec["boundaries"]))
    d_s = trajs[0].states.shape[1] if trajs else STATE_DIM
    d_a = trajs[0].actions.shape[1] if trajs else ACTION_DIM
    return TrajectoryDataset(layout, d_s, d_a, trajs)
