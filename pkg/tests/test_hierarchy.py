import pytest
from hypothesis import given, strategies as st

from hmdiffuser.hierarchy import HierarchyError, HierarchySpec, label_depth, strict_hierarchy


def test_strict_geometry():
    h = HierarchySpec((1, 5, 25), (5, 5, 2))
    assert h.L == 3
    assert h.horizons == (5, 25, 50)
    assert [h.window(lv) for lv in (1, 2, 3)] == [6, 6, 3]
    assert [h.pinned_index(lv) for lv in (1, 2, 3)] == [5, 5, 2]
    assert h.levels() == {1: (1, 5), 2: (5, 5), 3: (25, 2)}
    assert HierarchySpec.from_meta(h.to_meta()) == h


def test_relaxed_geometry_truncates_children():
    h = HierarchySpec((1, 4, 10), (6, 4, 3), strict=False)
    # a level-2 jump of 4 steps ends at index 4 of a 7-state level-1 window
    assert h.pinned_index(1) == 4
    # a level-3 jump of 10 steps ends at ceil(10 / 4) = 3
    assert h.pinned_index(2) == 3


@pytest.mark.parametrize("j, k, strict, msg", [
    ((), (), True, "one jump count"),
    ((1, 5), (5,), True, "one jump count"),
    ((2, 4), (2, 2), True, "jump length 1"),
    ((1, 5, 5), (5, 1, 2), True, "strictly increasing"),
    ((1, 5), (0, 2), True, ">= 1"),
    ((1, 4), (3, 2), True, "must equal"),
    ((1, 4, 6), (4, 2, 2), True, "multiple"),
    ((1, 8), (5, 2), False, "cannot cover"),
])
def test_invalid_hierarchies(j, k, strict, msg):
    with pytest.raises(HierarchyError, match=msg):
        HierarchySpec(j, k, strict)


@given(st.lists(st.integers(2, 5), min_size=0, max_size=3), st.integers(1, 6))
def test_strict_hierarchy_from_ratios(ratios, top_k):
    j = [1]
    for r in ratios:
        j.append(j[-1] * r)
    h = strict_hierarchy(j, top_k)
    for lv in range(1, h.L):
        assert h.horizon(lv) == h.j[lv]
        assert h.pinned_index(lv) == h.k[lv - 1]
    assert h.horizon(h.L) == j[-1] * top_k


@given(st.integers(2, 200))
def test_label_depth_is_minimal_cover(n):
    h = HierarchySpec((1, 5, 25), (5, 5, 2))
    lv = label_depth(n, h)
    if n - 1 <= h.horizon(h.L):
        assert h.horizon(lv) >= n - 1
        assert lv == 1 or h.horizon(lv - 1) < n - 1
    else:
        assert lv == h.L


def test_label_depth_boundaries():
    h = HierarchySpec((1, 5, 25), (5, 5, 2))
    assert [label_depth(n, h) for n in (2, 6, 7, 26, 27, 51, 500)] == [1, 1, 2, 2, 3, 3, 3]
    with pytest.raises(HierarchyError):
        label_depth(1, h)
