"""Hierarchy geometry: jump lengths, jump counts and per-level horizons."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


class HierarchyError(ValueError):
    pass


@dataclass(frozen=True)
class HierarchySpec:
    """Levels 1..L with stride ``j[l-1]`` and ``k[l-1]`` jumps per window.

    In strict mode each level's horizon equals the next level's stride, so a
    coarse jump is refined by exactly one finer window. Relaxed mode accepts
    arbitrary increasing strides; the finer window is then truncated at the
    index where the coarse jump ends.
    """

    j: tuple[int, ...]
    k: tuple[int, ...]
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "j", tuple(int(v) for v in self.j))
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        validate_hierarchy(self)

    @property
    def L(self) -> int:
        return len(self.j)

    @property
    def horizons(self) -> tuple[int, ...]:
        return tuple(a * b for a, b in zip(self.j, self.k))

    def horizon(self, level: int) -> int:
        return self.horizons[level - 1]

    def window(self, level: int) -> int:
        """States per level-``level`` window."""
        return self.k[level - 1] + 1

    def pinned_index(self, level: int) -> int:
        """Index in a level-``level`` window where the parent jump ends."""
        if level >= self.L:
            return self.k[level - 1]
        return min(math.ceil(self.j[level] / self.j[level - 1]), self.k[level - 1])

    def levels(self) -> dict[int, tuple[int, int]]:
        return {lv: (self.j[lv - 1], self.k[lv - 1]) for lv in range(1, self.L + 1)}

    def to_meta(self) -> dict:
        return {"j": list(self.j), "k": list(self.k), "strict": self.strict}

    @classmethod
    def from_meta(cls, meta: dict) -> "HierarchySpec":
        return cls(tuple(meta["j"]), tuple(meta["k"]), bool(meta.get("strict", True)))


def validate_hierarchy(spec: HierarchySpec) -> HierarchySpec:
    j, k = spec.j, spec.k
    if len(j) == 0 or len(j) != len(k):
        raise HierarchyError(f"need one jump count per level, got j={j} k={k}")
    if j[0] != 1:
        raise HierarchyError(f"the lowest level must have jump length 1, got {j[0]}")
    if any(b <= a for a, b in zip(j, j[1:])):
        raise HierarchyError(f"jump lengths must be strictly increasing, got {j}")
    if any(v < 1 for v in k):
        raise HierarchyError(f"jump counts must be >= 1, got {k}")
    if spec.strict:
        for lv in range(len(j) - 1):
            if j[lv + 1] % j[lv]:
                raise HierarchyError(f"strict hierarchy: j{lv + 2}={j[lv + 1]} is not a multiple "
                                     f"of j{lv + 1}={j[lv]}")
            if j[lv] * k[lv] != j[lv + 1]:
                raise HierarchyError(f"strict hierarchy: horizon of level {lv + 1} "
                                     f"({j[lv]}x{k[lv]}) must equal j{lv + 2}={j[lv + 1]}")
    else:
        for lv in range(len(j) - 1):
            if j[lv] * k[lv] < j[lv + 1]:
                raise HierarchyError(f"relaxed hierarchy: level {lv + 1} horizon "
                                     f"{j[lv] * k[lv]} cannot cover a level {lv + 2} jump of {j[lv + 1]}")
    return spec


def strict_hierarchy(j: Sequence[int], top_k: int) -> HierarchySpec:
    """Strict hierarchy from strides; lower jump counts follow from alignment."""
    k = [j[i + 1] // j[i] for i in range(len(j) - 1)] + [top_k]
    return HierarchySpec(tuple(j), tuple(k), strict=True)


def label_depth(traj_len: int, spec: HierarchySpec) -> int:
    """Smallest level whose horizon covers ``traj_len - 1`` steps, capped at L."""
    if traj_len < 2:
        raise HierarchyError("trajectory length must be >= 2")
    for lv, h in enumerate(spec.horizons, 1):
        if h >= traj_len - 1:
            return lv
    return spec.L
