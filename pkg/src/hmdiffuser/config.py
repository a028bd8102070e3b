"""Experiment configuration: a flat ``section.key = value`` text file.

Blank lines and lines starting with ``#`` are ignored. Values are parsed
according to the field's type: integers, floats, booleans (true/false),
strings, and comma-separated integer tuples. Command-line overrides use the
same dotted keys.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .hierarchy import HierarchyError, HierarchySpec
from .maze import ConfigError, LayoutError, load_layout


@dataclass
class CollectSection:
    transitions: int = 50_000
    max_cell_dist: int = 1
    jitter: float = 0.3


@dataclass
class StitchSection:
    c: int = 32
    delta: float = 0.5
    metric: str = "euclidean"
    horizon: int = 8
    n: int = 500
    eps_dyn: float = 0.3
    max_target_index: int = 5
    rounds: int = 3
    strategy: str = "linear"


@dataclass
class DiffusionSection:
    M: int = 64
    schedule: str = "cosine"
    widths: tuple[int, ...] = (32, 64, 128)
    batch: int = 64
    lr: float = 1e-3
    stitcher_steps: int = 1000
    planner_steps: int = 3000
    flat_steps: int = 1500
    flat_horizon: int = 7
    save_every: int = 500


@dataclass
class HierarchySection:
    j: tuple[int, ...] = (1, 5, 25)
    k: tuple[int, ...] = (5, 5, 2)
    strict: bool = True


@dataclass
class AuxSection:
    invdyn_epochs: int = 2
    reward_epochs: int = 2
    depth_epochs: int = 20
    depth_examples: int = 20_000
    hidden: int = 256


@dataclass
class EvalSection:
    seeds: int = 50
    task: str = "multi"
    planner: str = "hmd"
    replan_period: int = 5
    max_steps: int = 0
    min_cell_dist: int = 0


@dataclass
class ExperimentConfig:
    layout: str = "mini"
    seed: int = 0
    out: str = "runs/mini"
    collect: CollectSection = field(default_factory=CollectSection)
    stitch: StitchSection = field(default_factory=StitchSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    hierarchy: HierarchySection = field(default_factory=HierarchySection)
    aux: AuxSection = field(default_factory=AuxSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def hierarchy_spec(self) -> HierarchySpec:
        h = self.hierarchy
        return HierarchySpec(h.j, h.k, h.strict)

    def out_dir(self) -> Path:
        return Path(self.out)


def _convert(raw: str, typ, key: str):
    typ = str(typ)
    try:
        if typ in ("int", "<class 'int'>"):
            return int(raw)
        if typ in ("float", "<class 'float'>"):
            return float(raw)
        if typ in ("bool", "<class 'bool'>"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ.startswith("tuple"):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None


def _set(cfg: ExperimentConfig, key: str, raw: str) -> None:
    parts = key.split(".")
    target: Any = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(target) or not hasattr(target, p):
            raise ConfigError(f"unknown config key {key!r}")
        target = getattr(target, p)
    name = parts[-1]
    fields = {f.name: f for f in dataclasses.fields(target)} if dataclasses.is_dataclass(target) else {}
    if name not in fields or dataclasses.is_dataclass(getattr(target, name)):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, name, _convert(raw.strip(), fields[name].type, key))


def parse_config(text: str, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = cfg or ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        _set(cfg, key.strip(), value)
    return cfg


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        parse_config(text, cfg)
    for k, v in (overrides or {}).items():
        _set(cfg, k, str(v))
    validate_config(cfg)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []

    def walk(obj, prefix):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                walk(v, f"{prefix}{f.name}.")
            else:
                if isinstance(v, tuple):
                    v = ",".join(str(x) for x in v)
                elif isinstance(v, bool):
                    v = str(v).lower()
                lines.append(f"{prefix}{f.name} = {v}")

    walk(cfg, "")
    return "\n".join(lines) + "\n"


def _require(cond: bool, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every field against the preconditions of the module that uses it."""
    try:
        spec = load_layout(cfg.layout)
    except (LayoutError, ConfigError) as exc:
        raise ConfigError(f"layout: {exc}") from None
    _require(0 <= cfg.seed < 2 ** 64, "seed", "must be an unsigned 64-bit integer")
    _require(bool(cfg.out), "out", "output directory must be set")
    c = cfg.collect
    _require(c.transitions >= 1, "collect.transitions", "must be >= 1")
    _require(c.max_cell_dist >= 1, "collect.max_cell_dist", "must be >= 1")
    _require(0 <= c.jitter < 0.5, "collect.jitter", "must lie in [0, 0.5)")
    s = cfg.stitch
    _require(s.c >= 1, "stitch.c", "must be >= 1")
    _require(s.delta > 0, "stitch.delta", "must be > 0")
    _require(s.metric in ("euclidean", "cosine"), "stitch.metric", "must be euclidean or cosine")
    _require(s.horizon >= 3, "stitch.horizon", "must be >= 3")
    _require(s.n >= 1, "stitch.n", "must be >= 1")
    _require(s.eps_dyn > 0, "stitch.eps_dyn", "must be > 0")
    _require(0 <= s.max_target_index <= s.horizon - 2, "stitch.max_target_index",
             f"must lie in 0..{s.horizon - 2}")
    _require(s.rounds >= 1, "stitch.rounds", "must be >= 1")
    _require(s.strategy in ("linear", "exponential"), "stitch.strategy",
             "must be linear or exponential")
    d = cfg.diffusion
    _require(d.M >= 1, "diffusion.M", "must be >= 1")
    _require(d.schedule in ("cosine", "linear"), "diffusion.schedule", "must be cosine or linear")
    _require(len(d.widths) >= 1 and all(w >= 1 for w in d.widths), "diffusion.widths",
             "must be positive integers")
    _require(d.batch >= 1, "diffusion.batch", "must be >= 1")
    _require(d.lr > 0, "diffusion.lr", "must be > 0")
    for key in ("stitcher_steps", "planner_steps", "flat_steps"):
        _require(getattr(d, key) >= 1, f"diffusion.{key}", "must be >= 1")
    _require(d.flat_horizon >= 1, "diffusion.flat_horizon", "must be >= 1")
    _require(d.save_every >= 1, "diffusion.save_every", "must be >= 1")
    try:
        cfg.hierarchy_spec()
    except HierarchyError as exc:
        raise ConfigError(f"hierarchy: {exc}") from None
    a = cfg.aux
    for key in ("invdyn_epochs", "reward_epochs", "depth_epochs", "depth_examples", "hidden"):
        _require(getattr(a, key) >= 1, f"aux.{key}", "must be >= 1")
    e = cfg.eval
    _require(e.seeds >= 1, "eval.seeds", "must be >= 1")
    _require(e.task in ("single", "multi"), "eval.task", "must be single or multi")
    _require(e.planner in ("flat", "hd", "hmd"), "eval.planner", "must be flat, hd or hmd")
    _require(e.replan_period >= 1, "eval.replan_period", "must be >= 1")
    _require(e.max_steps >= 0, "eval.max_steps", "must be >= 0 (0 uses the layout's budget)")
    _require(e.min_cell_dist >= 0, "eval.min_cell_dist", "must be >= 0")
    del spec
    return cfg
