import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmdiffuser import dataset as dsmod
from hmdiffuser.dataset import (DatasetError, Trajectory, TrajectoryDataset, collect_base, concat,
                                length_histogram, mean_length, split_segments, start_goal_coverage)
from hmdiffuser.maze import all_pairs_distances, cell_of, in_free_space, load_layout
from hmdiffuser.rng import RngStream

TOY = "######\n#...##\n#.#..#\n#....#\n######\n"


@pytest.fixture(scope="module")
def mini():
    return load_layout("mini")


@pytest.fixture(scope="module")
def base(mini):
    return collect_base(mini, 3000, 1, RngStream(0, 1))


def brute_force_coverage(trajectories, spec):
    # enumerate every ordered pair of time indices; cells found by flooring positions
    free = spec.free_cells
    pairs = set()
    for t in trajectories:
        cells = [(int(math.floor(y)), int(math.floor(x))) for x, y in t.states[:, :2]]
        for i in range(len(cells)):
            for j in range(i + 1, len(cells)):
                if cells[i] != cells[j]:
                    pairs.add((cells[i], cells[j]))
    return len(pairs) / (len(free) * (len(free) - 1))


def _random_walk(spec, rng, n):
    cells = spec.free_cells
    c = cells[int(rng.integers(len(cells)))]
    pts = []
    for _ in range(n):
        pts.append([c[1] + rng.uniform(0.05, 0.95), c[0] + rng.uniform(0.05, 0.95), 0, 0])
        nbrs = [(c[0] + dr, c[1] + dc) for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))]
        nbrs = [x for x in nbrs if spec.is_free(x)]
        c = nbrs[int(rng.integers(len(nbrs)))]
    return Trajectory(np.array(pts), np.zeros((n - 1, 2)), np.zeros(n - 1))


@pytest.mark.parametrize("seed", range(10))
def test_coverage_matches_brute_force_on_toy_layout(tmp_path, seed):
    path = tmp_path / "toy.txt"
    path.write_text(TOY)
    spec = load_layout(f"custom:{path}")
    assert len(spec.free_cells) <= 10
    rng = np.random.default_rng(seed)
    trajs = [_random_walk(spec, rng, int(rng.integers(2, 8))) for _ in range(int(rng.integers(1, 6)))]
    ds = TrajectoryDataset(spec.name, 4, 2, trajs)
    assert start_goal_coverage(ds, spec) == brute_force_coverage(trajs, spec)


def test_coverage_needs_matching_layout(base):
    with pytest.raises(DatasetError):
        start_goal_coverage(base, load_layout("large"))


def test_collect_base_properties(base, mini):
    assert base.n_transitions() >= 3000
    dists = all_pairs_distances(mini)
    for t in base:
        assert t.round == 0 and t.boundaries == ()
        assert in_free_space(mini, t.states[:, :2]).all()
        a, b = cell_of(mini, t.states[0]), cell_of(mini, t.states[-1])
        # the goal region may straddle a neighbouring cell
        assert dists[a][b] <= 2
        np.testing.assert_array_equal(t.states[0, 2:], 0.0)
        assert np.abs(t.actions).max() <= 1.0
    assert 0 < start_goal_coverage(base, mini) < 1


def test_collect_base_is_deterministic(mini):
    a = collect_base(mini, 300, 1, RngStream(3, 1))
    b = collect_base(mini, 300, 1, RngStream(3, 1))
    assert a.equals(b)


def test_round_trip_is_bit_exact(tmp_path, base):
    path = dsmod.save(base, tmp_path / "d.pets")
    back = dsmod.load(path)
    assert back.equals(base)
    assert back.meta["generator"] == "collect_base"
    assert dsmod.to_bytes(back) == path.read_bytes()


def test_jsonl_round_trip(tmp_path, base):
    small = TrajectoryDataset(base.layout, 4, 2, base.trajectories[:20])
    small.append(Trajectory(base[0].states, base[0].actions, base[0].rewards, 2, (3, 5)))
    dsmod.export_jsonl(small, tmp_path / "d.jsonl")
    assert dsmod.import_jsonl(tmp_path / "d.jsonl", base.layout).equals(small)


@pytest.mark.parametrize("mutate", [
    lambda b: b[:10],
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:40] + bytes([b[40] ^ 1]) + b[41:],
    lambda b: b[:-6] + b[-4:],
])
def test_corrupted_files_rejected(base, mutate):
    small = TrajectoryDataset(base.layout, 4, 2, base.trajectories[:3])
    with pytest.raises(DatasetError):
        dsmod.from_bytes(mutate(dsmod.to_bytes(small)))


@settings(max_examples=25, deadline=None)
@given(lengths=st.lists(st.integers(2, 30), min_size=1, max_size=8), seg=st.integers(2, 10))
def test_split_segments_partition(lengths, seg):
    trajs = [Trajectory(np.arange(4 * n, dtype=float).reshape(n, 4), np.zeros((n - 1, 2)),
                        np.zeros(n - 1)) for n in lengths]
    out = split_segments(TrajectoryDataset("mini", 4, 2, trajs), seg)
    assert len(out) == sum(n // seg for n in lengths)
    assert all(len(t) == seg for t in out)


def test_trajectory_validation():
    with pytest.raises(DatasetError):
        Trajectory(np.zeros((1, 4)), np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(DatasetError):
        Trajectory(np.zeros((3, 4)), np.zeros((1, 2)), np.zeros(2))
    with pytest.raises(DatasetError):
        Trajectory(np.zeros((3, 4)), np.zeros((2, 2)), np.zeros(2), round=1)
    with pytest.raises(DatasetError):
        TrajectoryDataset("mini", 4, 2, [Trajectory(np.zeros((3, 3)), np.zeros((2, 2)), np.zeros(2))])


def test_concat_and_metrics(base):
    both = concat([base, base])
    assert len(both) == 2 * len(base)
    assert mean_length(both) == pytest.approx(mean_length(base))
    counts, edges = length_histogram(base, 5)
    assert counts.sum() == len(base) and edges[0] == 0
    with pytest.raises(DatasetError):
        concat([])
    with pytest.raises(DatasetError):
        concat([base, TrajectoryDataset("large", 4, 2)])
    with pytest.raises(DatasetError):
        mean_length(TrajectoryDataset("mini", 4, 2))


def test_three_cell_corridor_coverage(tmp_path):
    path = tmp_path / "line.txt"
    path.write_text("#####\n#...#\n#####\n")
    spec = load_layout(f"custom:{path}")
    assert len(spec.free_cells) == 3
    walk = Trajectory(np.array([[1.5, 1.5, 0, 0], [2.5, 1.5, 0, 0], [3.5, 1.5, 0, 0]]),
                      np.zeros((2, 2)), np.zeros(2))
    ds = TrajectoryDataset(spec.name, 4, 2, [walk])
    assert start_goal_coverage(ds, spec) == 0.5 == brute_force_coverage([walk], spec)


def _hand_written_file():
    # assembled field by field from the documented layout, floats given big-endian and swapped
    import struct
    import zlib
    states = np.array([[1.5, 1.5, 0.0, 0.0], [1.6, 1.5, 1.0, 0.0], [1.8, 1.5, 2.0, 0.0]], dtype=">f4")
    actions = np.array([[1.0, 0.0], [1.0, 0.0]], dtype=">f4")
    rewards = np.array([0.0, 1.0], dtype=">f4")
    body = b"PETS" + struct.pack("<H", 1) + struct.pack("<H", 4) + b"mini"
    body += struct.pack("<I", 4) + struct.pack("<I", 2) + struct.pack("<Q", 1)
    body += struct.pack("<I", 3) + struct.pack("<H", 2) + struct.pack("<I", 2) + struct.pack("<II", 0, 1)
    for arr in (states, actions, rewards):
        body += arr.byteswap().view(arr.dtype.newbyteorder("<")).tobytes()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF), states, actions, rewards


def test_hand_written_reference_file_loads():
    buf, states, actions, rewards = _hand_written_file()
    ds = dsmod.from_bytes(buf)
    assert ds.layout == "mini" and len(ds) == 1
    t = ds[0]
    np.testing.assert_array_equal(t.states, states.astype(np.float32))
    np.testing.assert_array_equal(t.actions, actions.astype(np.float32))
    np.testing.assert_array_equal(t.rewards, rewards.astype(np.float32))
    assert t.round == 2 and t.boundaries == (0, 1)
    # big-endian arrays in memory still serialize to the same little-endian file
    again = TrajectoryDataset("mini", 4, 2, [Trajectory(states, actions, rewards, 2, (0, 1))])
    assert dsmod.to_bytes(again) == buf


def test_union_metrics_match_raw_recompute(base, mini):
    extra = TrajectoryDataset(mini.name, 4, 2, [_random_walk(mini, np.random.default_rng(i), 12)
                                                for i in range(30)])
    union = concat([base, extra])
    raw = list(base.trajectories) + list(extra.trajectories)
    assert mean_length(union) == pytest.approx(np.mean([len(t) for t in raw]))
    assert start_goal_coverage(union, mini) == pytest.approx(brute_force_coverage(raw, mini))
