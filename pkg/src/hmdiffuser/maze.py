"""Point-mass maze environments.

Layouts are boolean occupancy grids (True = wall). World coordinates put
``x`` along columns and ``y`` along rows, so cell (row, col) spans
``[col, col + 1) x [row, row + 1)`` times the cell size. States are
4-vectors ``(x, y, vx, vy)`` and actions are accelerations in [-1, 1]^2.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

STATE_DIM = 4
ACTION_DIM = 2

_LAYOUTS = {
    "mini": """
#######
#..#..#
#.##.##
#.....#
#######
""",
    "large": """
############
#....#.....#
#.##.#.#.#.#
#......#...#
#.####.###.#
#..#.#.....#
##.#.#.#.###
#..#...#...#
############
""",
    "giant": """
################
#.............##
###.#.#####.#.##
#.#.#...#...#..#
#.#.###.#.###.##
#.#.#.#.#...#.##
#...#.#...#.#.##
#.#.....#.#.#..#
#.#.#####.#.#.##
#.............##
#.###.###.###.##
################
""",
    "xxlarge": """
########################
#...............#.....##
##.##.#########.#.###.##
#.............#...#....#
#.######.##.#.#.###.#.##
#...#.#...#.#.#.#...#.##
###.#.#.#.###.#.#.#.#.##
#.....#.#.....#.#.#....#
#####.#.#.#####.#.#.#.##
#...#...#.#.....#...#.##
#.#.###...#.###.#.#.#.##
#.#.....#.#.....#.#....#
#.####.##.###.#.#.###.##
#...#.......#...#.#...##
#.#.####.#.##.#####.#.##
#.#.................#..#
#.###.###.###.###.###.##
########################
""",
}

MAX_STEPS = {"mini": 400, "large": 800, "giant": 1000, "xxlarge": 1300}


class LayoutError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MazeSpec:
    name: str
    grid: np.ndarray
    cell_size: float = 1.0
    goal_radius: float = 0.5
    max_steps: int = 400
    dt: float = 0.1
    v_max: float = 2.0
    kp: float = 10.0
    kd: float = 2.0
    gate_radius: float = 2.0
    _free: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "_free", np.argwhere(~grid))

    @property
    def rows(self) -> int:
        return self.grid.shape[0]

    @property
    def cols(self) -> int:
        return self.grid.shape[1]

    @property
    def free_cells(self) -> list[tuple[int, int]]:
        return [tuple(int(v) for v in rc) for rc in self._free]

    @property
    def width(self) -> float:
        return self.cols * self.cell_size

    @property
    def height(self) -> float:
        return self.rows * self.cell_size

    def is_free(self, cell: tuple[int, int]) -> bool:
        r, c = cell
        return 0 <= r < self.rows and 0 <= c < self.cols and not self.grid[r, c]

    def cell_center(self, cell: tuple[int, int]) -> np.ndarray:
        r, c = cell
        return np.array([(c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size])

    def task_goal_cell(self) -> tuple[int, int]:
        """Free cell closest to the bottom-right corner (the single-task goal)."""
        r, c = max(self.free_cells, key=lambda rc: (rc[0] + rc[1], rc[0]))
        return (r, c)

    def task_goal(self) -> np.ndarray:
        return self.cell_center(self.task_goal_cell())

    def to_text(self) -> str:
        return "\n".join("".join("#" if w else "." for w in row) for row in self.grid)


def parse_layout(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if not rows:
        raise LayoutError("empty layout")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise LayoutError("layout rows have unequal length")
    bad = {ch for r in rows for ch in r} - {"#", "."}
    if bad:
        raise LayoutError(f"unexpected layout characters {sorted(bad)}")
    return np.array([[ch == "#" for ch in r] for r in rows], dtype=bool)


def validate_grid(grid: np.ndarray) -> None:
    rows, cols = grid.shape
    if rows < 3 or cols < 3:
        raise LayoutError(f"grid {rows}x{cols} too small")
    border = np.concatenate([grid[0], grid[-1], grid[:, 0], grid[:, -1]])
    if not border.all():
        raise LayoutError("outer boundary cells must all be walls")
    free = np.argwhere(~grid)
    if len(free) < 2:
        raise LayoutError(f"layout needs at least 2 free cells, has {len(free)}")
    dist = bfs_distances(grid, tuple(free[0]))
    if (dist[~grid] < 0).any():
        raise LayoutError("free region is not connected")


def load_layout(name: str, **overrides) -> MazeSpec:
    """Built-in layout by name, or ``custom:<path>`` for a text layout file."""
    if name.startswith("custom:"):
        path = Path(name[len("custom:"):])
        try:
            text = path.read_text()
        except OSError as e:
            raise LayoutError(f"cannot read layout file {path}: {e}") from None
        grid = parse_layout(text)
        label = name  # reloadable from the name stored in datasets
        steps = overrides.pop("max_steps", 400)
    elif name in _LAYOUTS:
        grid = parse_layout(_LAYOUTS[name])
        label = name
        steps = overrides.pop("max_steps", MAX_STEPS[name])
    else:
        raise LayoutError(f"unknown layout {name!r}; expected one of "
                          f"{sorted(_LAYOUTS)} or custom:<path>")
    validate_grid(grid)
    spec = MazeSpec(label, grid, max_steps=steps)
    if "gate_radius" not in overrides:
        overrides["gate_radius"] = 2.0 * overrides.get("cell_size", spec.cell_size)
    return replace(spec, **overrides)


def bfs_distances(grid: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Shortest 4-connected path length in cells from ``start``; -1 if unreachable."""
    dist = np.full(grid.shape, -1, dtype=np.int64)
    if grid[start]:
        return dist
    dist[start] = 0
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < grid.shape[0] and 0 <= nc < grid.shape[1] \
                    and not grid[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                queue.append((nr, nc))
    return dist


def bfs_path(spec: MazeSpec, start: tuple[int, int], goal: tuple[int, int]) -> list[tuple[int, int]]:
    dist = bfs_distances(spec.grid, goal)
    if dist[start] < 0:
        raise LayoutError(f"cell {goal} unreachable from {start}")
    path = [start]
    r, c = start
    while (r, c) != goal:
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if spec.is_free((nr, nc)) and dist[nr, nc] == dist[r, c] - 1:
                r, c = nr, nc
                break
        path.append((r, c))
    return path


def all_pairs_distances(spec: MazeSpec) -> dict[tuple[int, int], np.ndarray]:
    return {cell: bfs_distances(spec.grid, cell) for cell in spec.free_cells}


def _cell_index(v, size: float, n: int, axis: str):
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0) or np.any(v > n * size):
        raise ValueError(f"{axis} coordinate {v} outside grid extent [0, {n * size}]")
    # exact boundaries belong to the lower-index cell
    return np.maximum(np.ceil(v / size).astype(np.int64) - 1, 0)


def cell_of(spec: MazeSpec, position) -> tuple[int, int]:
    x, y = float(position[0]), float(position[1])
    row = int(_cell_index(y, spec.cell_size, spec.rows, "y"))
    col = int(_cell_index(x, spec.cell_size, spec.cols, "x"))
    return row, col


def cells_of(spec: MazeSpec, positions: np.ndarray) -> np.ndarray:
    """Vectorised ``cell_of`` for an (n, >=2) array; returns (n, 2) [row, col]."""
    positions = np.asarray(positions)
    rows = _cell_index(positions[..., 1], spec.cell_size, spec.rows, "y")
    cols = _cell_index(positions[..., 0], spec.cell_size, spec.cols, "x")
    return np.stack([rows, cols], axis=-1)


def in_free_space(spec: MazeSpec, positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions)
    x, y = positions[..., 0], positions[..., 1]
    inside = (x >= 0) & (x <= spec.width) & (y >= 0) & (y <= spec.height)
    ok = np.zeros(x.shape, dtype=bool)
    if inside.any():
        rc = cells_of(spec, np.stack([np.clip(x, 0, spec.width), np.clip(y, 0, spec.height)], -1))
        ok = inside & ~spec.grid[rc[..., 0], rc[..., 1]]
    return ok


def make_state(position, velocity=(0.0, 0.0)) -> np.ndarray:
    return np.array([position[0], position[1], velocity[0], velocity[1]], dtype=np.float64)


def step_batch(spec: MazeSpec, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Advance (n, 4) states by (n, 2) actions; pure and vectorised."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.clip(np.nan_to_num(np.atleast_2d(np.asarray(actions, dtype=np.float64))), -1.0, 1.0)
    cs, eps = spec.cell_size, 1e-4 * spec.cell_size
    pos = states[:, :2].copy()
    vel = np.clip(states[:, 2:] + actions * spec.dt, -spec.v_max, spec.v_max)
    row = _cell_index(pos[:, 1], cs, spec.rows, "y")
    for axis in (0, 1):
        new = pos[:, axis] + vel[:, axis] * spec.dt
        n_cells = spec.cols if axis == 0 else spec.rows
        idx = _cell_index(np.clip(new, 0, n_cells * cs), cs, n_cells, "xy"[axis])
        if axis == 0:
            hit = spec.grid[row, idx]
        else:
            col = _cell_index(pos[:, 0], cs, spec.cols, "x")
            hit = spec.grid[idx, col]
        moving_up = vel[:, axis] > 0
        face = np.where(moving_up, idx * cs - eps, (idx + 1) * cs + eps)
        pos[:, axis] = np.where(hit, face, new)
        vel[:, axis] = np.where(hit, 0.0, vel[:, axis])
    return np.concatenate([pos, vel], axis=1)


def step_scalar(spec: MazeSpec, s, a) -> tuple[float, float, float, float]:
    """Same dynamics as ``step_batch`` for one state, on plain floats."""
    cs, eps, dt, vm = spec.cell_size, 1e-4 * spec.cell_size, spec.dt, spec.v_max
    grid = spec.grid
    ax = min(max(float(a[0]), -1.0), 1.0)
    ay = min(max(float(a[1]), -1.0), 1.0)
    x, y = float(s[0]), float(s[1])
    vx = min(max(float(s[2]) + ax * dt, -vm), vm)
    vy = min(max(float(s[3]) + ay * dt, -vm), vm)
    row = max(math.ceil(y / cs) - 1, 0)
    nx = x + vx * dt
    col = max(math.ceil(nx / cs) - 1, 0)
    if grid[row, col]:
        nx = col * cs - eps if vx > 0 else (col + 1) * cs + eps
        vx = 0.0
        col = max(math.ceil(nx / cs) - 1, 0)
    ny = y + vy * dt
    nrow = max(math.ceil(ny / cs) - 1, 0)
    if grid[nrow, col]:
        ny = nrow * cs - eps if vy > 0 else (nrow + 1) * cs + eps
        vy = 0.0
    return nx, ny, vx, vy


def reward_of(spec: MazeSpec, states: np.ndarray, goal) -> np.ndarray:
    d = np.linalg.norm(np.atleast_2d(states)[:, :2] - np.asarray(goal)[..., :2], axis=-1)
    return (d <= spec.goal_radius).astype(np.float64)


def step(spec: MazeSpec, s: np.ndarray, a, goal, t: int = 0) -> tuple[np.ndarray, float, bool]:
    """One transition; ``t`` is the index of this step within the episode."""
    nxt = step_batch(spec, s[None], np.asarray(a)[None])[0]
    r = float(reward_of(spec, nxt[None], goal)[0])
    done = r == 1.0 or t + 1 >= spec.max_steps
    return nxt, r, done


def pd_control(s: np.ndarray, waypoint, kp: float = 10.0, kd: float = 2.0) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    err = np.asarray(waypoint, dtype=np.float64)[..., :2] - s[..., :2]
    return np.clip(kp * err - kd * s[..., 2:4], -1.0, 1.0)


def pd_gate(s: np.ndarray, goal, radius: float) -> np.ndarray | bool:
    """True iff the agent is within ``radius`` of the goal (closed ball)."""
    if radius <= 0:
        raise ConfigError("gate radius must be positive")
    d = np.linalg.norm(np.asarray(s)[..., :2] - np.asarray(goal)[..., :2], axis=-1)
    out = d <= radius
    return bool(out) if np.ndim(out) == 0 else out


class WaypointFollower:
    """Scripted expert: PD tracking of BFS cell centres, then the goal itself."""

    def __init__(self, spec: MazeSpec, start_pos, goal_pos, switch_radius: float | None = None):
        self.spec = spec
        cells = bfs_path(spec, cell_of(spec, start_pos), cell_of(spec, goal_pos))
        self.path_cells = cells
        self.waypoints = [spec.cell_center(c) for c in cells[1:-1]] + [np.asarray(goal_pos, dtype=np.float64)]
        self.switch_radius = 0.5 * spec.cell_size if switch_radius is None else switch_radius
        self.index = 0

    def __call__(self, s: np.ndarray) -> np.ndarray:
        while self.index < len(self.waypoints) - 1 and \
                np.linalg.norm(s[:2] - self.waypoints[self.index]) < self.switch_radius:
            self.index += 1
        target = self.waypoints[self.index]
        if self.index < len(self.waypoints) - 1:
            # keep some speed through intermediate waypoints
            ahead = self.waypoints[self.index + 1] - target
            target = target + 0.3 * ahead
        return pd_control(s, target, self.spec.kp, self.spec.kd)


@dataclass(frozen=True)
class ReferenceReturns:
    r_rand: float
    r_exp: float


def normalized_score(total_return: float, spec: MazeSpec,
                     refs: "ReferenceReturns | dict[str, ReferenceReturns]") -> float:
    """100 (R - R_rand) / (R_exp - R_rand); ``refs`` may be keyed by layout name."""
    if isinstance(refs, dict):
        if spec.name not in refs:
            raise ConfigError(f"no reference returns for layout {spec.name!r}")
        refs = refs[spec.name]
    if refs.r_exp <= refs.r_rand:
        raise ConfigError(f"expert return {refs.r_exp} must exceed random return {refs.r_rand}")
    return 100.0 * (total_return - refs.r_rand) / (refs.r_exp - refs.r_rand)


def random_free_position(spec: MazeSpec, cell: tuple[int, int], rng, jitter: float = 0.3) -> np.ndarray:
    return spec.cell_center(cell) + rng.uniform(-jitter, jitter, 2) * spec.cell_size


def rollout_policy(spec: MazeSpec, policy, start: np.ndarray, goal, max_steps: int) -> float:
    """Single-task return of ``policy(state) -> action`` with termination at the goal."""
    s = start
    total = 0.0
    for t in range(max_steps):
        s, r, done = step(spec, s, policy(s), goal, t)
        total += r
        if done:
            break
    return total


def compute_reference_returns(spec: MazeSpec, rng, episodes: int = 200) -> ReferenceReturns:
    goal = spec.task_goal()
    goal_cell = spec.task_goal_cell()
    starts = [c for c in spec.free_cells if c != goal_cell]
    rand, expert = [], []
    for _ in range(episodes):
        cell = starts[int(rng.integers(len(starts)))]
        start = make_state(random_free_position(spec, cell, rng))
        actions = rng.uniform(-1.0, 1.0, (spec.max_steps, 2))
        it = iter(actions)
        rand.append(rollout_policy(spec, lambda s: next(it), start, goal, spec.max_steps))
        follower = WaypointFollower(spec, start[:2], goal)
        expert.append(rollout_policy(spec, follower, start, goal, spec.max_steps))
    return ReferenceReturns(float(np.mean(rand)), float(np.mean(expert)))


def save_references(path, refs: dict[str, ReferenceReturns]) -> None:
    lines = [f"{name} r_rand={r.r_rand!r} r_exp={r.r_exp!r}" for name, r in sorted(refs.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_references(path) -> dict[str, ReferenceReturns]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, *fields = line.split()
        kv = dict(f.split("=", 1) for f in fields)
        out[name] = ReferenceReturns(float(kv["r_rand"]), float(kv["r_exp"]))
    return out
