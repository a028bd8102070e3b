"""DDPM machinery for state windows.

Windows are arrays of shape (batch, window, state_dim) in normalized
coordinates. The denoiser is a temporal-convolution U-Net over the window
axis, conditioned on the diffusion step and (when the model serves several
hierarchy levels) on a level embedding. Conditioning on fixed states is done
by inpainting: after each reverse step the constrained entries are replaced
by their targets noised to the new step.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .nn import (Normalizer, ParameterSet, adam_step, gradients, init_linear, linear)
from .rng import RngStream
from .tensor import Tensor, ShapeError, concat, conv1d, group_norm, no_grad, silu


class DiffusionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Index ``m`` runs 1..M; entry 0 is the clean-data convention (alpha = 1)."""

    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray
    kind: str = "custom"

    @property
    def M(self) -> int:
        return len(self.alphas) - 1

    @classmethod
    def from_alphas(cls, alphas: Sequence[float], kind: str = "custom") -> "DiffusionSchedule":
        a = np.asarray(alphas, dtype=np.float64)
        if a.ndim != 1 or len(a) < 1:
            raise DiffusionError("need at least one diffusion step")
        if np.any(a <= 0) or np.any(a > 1):
            raise DiffusionError("alphas must lie in (0, 1]")
        alphas = np.concatenate([[1.0], a])
        bars = np.cumprod(alphas)
        var = np.zeros_like(alphas)
        for m in range(1, len(alphas)):
            denom = 1.0 - bars[m]
            var[m] = 0.0 if denom <= 0 else (1.0 - bars[m - 1]) / denom * (1.0 - alphas[m])
        return cls(alphas, bars, np.sqrt(var), kind)


def make_schedule(M: int, kind: str = "cosine") -> DiffusionSchedule:
    if M < 1:
        raise DiffusionError("M must be >= 1")
    if kind == "cosine":
        s = 0.008
        t = np.arange(M + 1) / M
        f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        bars = f / f[0]
        betas = np.clip(1.0 - bars[1:] / bars[:-1], 0.0, 0.999)
    elif kind == "linear":
        scale = 1000.0 / M
        betas = np.linspace(1e-4 * scale, min(0.02 * scale, 0.999), M)
    else:
        raise DiffusionError(f"unknown schedule kind {kind!r}")
    sched = DiffusionSchedule.from_alphas(1.0 - betas, kind)
    if sched.alpha_bars[-1] >= 1e-3:
        raise DiffusionError(f"{kind} schedule with M={M} does not reach noise "
                             f"(final alpha_bar {sched.alpha_bars[-1]:.3g})")
    return sched


def q_sample(x0: np.ndarray, m, noise: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """Closed-form forward process: sqrt(abar_m) x0 + sqrt(1 - abar_m) noise."""
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if x0.shape != noise.shape:
        raise ShapeError(f"q_sample: noise shape {noise.shape} != data shape {x0.shape}")
    m = np.asarray(m)
    if np.any(m < 0) or np.any(m > sched.M):
        raise DiffusionError(f"step {m} outside 0..{sched.M}")
    ab = sched.alpha_bars[m]
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise).astype(x0.dtype)


def forward_transition(x: np.ndarray, m: int, noise: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """One step of the forward chain, x_{m-1} -> x_m."""
    a = sched.alphas[m]
    return np.sqrt(a) * x + np.sqrt(1.0 - a) * noise


def sinusoidal(m: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = np.asarray(m, dtype=np.float64)[:, None] * freqs[None]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(np.float32)


@dataclass
class DenoiserSpec:
    state_dim: int
    window: int
    widths: tuple[int, ...] = (32, 64, 128)
    time_dim: int = 32
    n_levels: int = 1
    kernel: int = 5
    groups: int = 8
    mask_input: bool = False

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.window < 2:
            raise DiffusionError("window length must be >= 2")
        if self.n_levels < 1:
            raise DiffusionError("n_levels must be >= 1")

    @property
    def level_embedding(self) -> bool:
        return self.n_levels > 1


class TemporalUNet:
    """eps_theta(x_m, m, level) over windows of shape (B, W, state_dim)."""

    def __init__(self, spec: DenoiserSpec):
        self.spec = spec

    def init(self, rng: RngStream) -> ParameterSet:
        sp = self.spec
        p = ParameterSet()
        e = sp.time_dim
        init_linear(p, "time.0", e, 4 * e, rng)
        init_linear(p, "time.1", 4 * e, e, rng)
        if sp.level_embedding:
            init_linear(p, "level.0", sp.n_levels, e, rng)
            init_linear(p, "level.1", e, e, rng)
        chans = [sp.state_dim + int(sp.mask_input)] + list(sp.widths)
        for i in range(len(sp.widths)):
            self._init_block(p, f"down{i}", chans[i], chans[i + 1], rng)
        self._init_block(p, "mid", sp.widths[-1], sp.widths[-1], rng)
        for i in reversed(range(len(sp.widths))):
            out = sp.widths[i - 1] if i > 0 else sp.widths[0]
            self._init_block(p, f"up{i}", 2 * sp.widths[i], out, rng)
        self._init_conv(p, "final", sp.widths[0], sp.state_dim, 1, rng, zero=True)
        return p

    def _init_conv(self, p, name, cin, cout, k, rng, zero=False):
        bound = 1.0 / math.sqrt(cin * k)
        w = np.zeros((cout, cin, k)) if zero else rng.uniform(-bound, bound, (cout, cin, k))
        p.add(f"{name}.w", w)
        p.add(f"{name}.b", np.zeros(cout) if zero else rng.uniform(-bound, bound, (cout,)))

    def _init_block(self, p, name, cin, cout, rng):
        k = self.spec.kernel
        self._init_conv(p, f"{name}.conv0", cin, cout, k, rng)
        self._init_conv(p, f"{name}.conv1", cout, cout, k, rng)
        for j in (0, 1):
            p.add(f"{name}.gn{j}.g", np.ones(cout))
            p.add(f"{name}.gn{j}.b", np.zeros(cout))
        init_linear(p, f"{name}.cond", self.spec.time_dim, cout, rng)
        if cin != cout:
            self._init_conv(p, f"{name}.skip", cin, cout, 1, rng)

    def _groups(self, ch: int) -> int:
        g = min(self.spec.groups, ch)
        while ch % g:
            g -= 1
        return g

    def _block(self, p, name, x: Tensor, emb: Tensor) -> Tensor:
        h = conv1d(x, p[f"{name}.conv0.w"], p[f"{name}.conv0.b"])
        ch = h.shape[1]
        h = silu(group_norm(h, self._groups(ch), p[f"{name}.gn0.g"], p[f"{name}.gn0.b"]))
        cond = linear(p, f"{name}.cond", emb)
        h = h + cond.reshape(cond.shape[0], ch, 1)
        h = conv1d(h, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"])
        h = silu(group_norm(h, self._groups(ch), p[f"{name}.gn1.g"], p[f"{name}.gn1.b"]))
        res = conv1d(x, p[f"{name}.skip.w"], p[f"{name}.skip.b"]) if f"{name}.skip.w" in p else x
        return h + res

    def __call__(self, p: ParameterSet, x, m, levels=None, cond_mask=None) -> Tensor:
        sp = self.spec
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
        if x.ndim != 3 or x.shape[2] != sp.state_dim:
            raise ShapeError(f"denoiser expects (batch, window, {sp.state_dim}), got {x.shape}")
        bsz = x.shape[0]
        m = np.broadcast_to(np.asarray(m), (bsz,))
        t = Tensor(sinusoidal(m, sp.time_dim))
        emb = linear(p, "time.1", silu(linear(p, "time.0", t)))
        if sp.level_embedding:
            if levels is None:
                raise DiffusionError("level-conditioned denoiser needs levels")
            lv = np.broadcast_to(np.asarray(levels), (bsz,))
            if np.any(lv < 1) or np.any(lv > sp.n_levels):
                raise DiffusionError(f"levels must lie in 1..{sp.n_levels}")
            onehot = np.zeros((bsz, sp.n_levels), dtype=np.float32)
            onehot[np.arange(bsz), lv - 1] = 1.0
            emb = emb + linear(p, "level.1", silu(linear(p, "level.0", Tensor(onehot))))
        h = x.transpose(0, 2, 1)
        if sp.mask_input:
            # an extra input channel marks the entries held at their targets
            flag = np.zeros((bsz, 1, x.shape[1]), dtype=np.float32)
            if cond_mask is not None:
                flag[:, 0] = np.asarray(cond_mask, dtype=np.float32)
            h = concat([h, Tensor(flag)], axis=1)
        skips = []
        n = len(sp.widths)
        for i in range(n):
            h = self._block(p, f"down{i}", h, emb)
            skips.append(h)
            if i < n - 1:
                h = h[:, :, ::2]
        h = self._block(p, "mid", h, emb)
        for i in reversed(range(n)):
            skip = skips[i]
            if h.shape[2] != skip.shape[2]:
                h = h[:, :, np.arange(skip.shape[2]) // 2]
            h = self._block(p, f"up{i}", concat([h, skip], axis=1), emb)
        out = conv1d(h, p["final.w"], p["final.b"])
        return out.transpose(0, 2, 1)


EpsFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class Constraint:
    """Fixed states at window indices (state space, per batch row).

    ``mask`` is (B, W) bool and ``values`` is (B, W, state_dim); entries of
    ``values`` outside the mask are ignored.
    """

    mask: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.mask.shape != self.values.shape[:2]:
            raise ShapeError(f"constraint mask {self.mask.shape} does not match values "
                             f"{self.values.shape}")

    @classmethod
    def at(cls, window: int, state_dim: int, fixed: dict[int, np.ndarray]) -> "Constraint":
        """Single-row constraint from ``{index: state}``."""
        mask = np.zeros((1, window), dtype=bool)
        values = np.zeros((1, window, state_dim), dtype=np.float32)
        for i, s in fixed.items():
            if not -window <= i < window:
                raise DiffusionError(f"constraint index {i} outside window of {window}")
            mask[0, i] = True
            values[0, i] = s
        return cls(mask, values)

    @classmethod
    def stack(cls, items: Sequence["Constraint"]) -> "Constraint":
        return cls(np.concatenate([c.mask for c in items]), np.concatenate([c.values for c in items]))

    @property
    def batch(self) -> int:
        return self.mask.shape[0]

    @property
    def window(self) -> int:
        return self.mask.shape[1]


def _draw(rngs: Sequence[RngStream], shape: tuple[int, ...]) -> np.ndarray:
    """One row of standard normals per stream, so rows do not depend on batch layout."""
    return np.stack([r.normal(shape) for r in rngs])


INPAINT_MODES = ("clean", "noised")


def _inpaint(x: np.ndarray, mask: np.ndarray, target: np.ndarray, m: int,
             sched: DiffusionSchedule, rngs: Sequence[RngStream], mode: str = "clean") -> np.ndarray:
    if m == 0 or mode == "clean":
        return np.where(mask[..., None], target, x)
    noised = q_sample(target, m, _draw(rngs, target.shape[1:]), sched)
    return np.where(mask[..., None], noised, x)


def denoise_step(eps_fn: EpsFn, x_m: np.ndarray, m: int, sched: DiffusionSchedule,
                 mask: np.ndarray | None = None, target: np.ndarray | None = None,
                 levels=None, rngs: Sequence[RngStream] = (), guide_grad=None,
                 guide_scale: float = 0.0, clip: float | None = None,
                 inpaint: str = "clean") -> np.ndarray:
    """x_m -> x_{m-1} with the fixed-variance reverse step plus inpainting.

    ``target`` holds the constrained values in the same (normalized) space as
    ``x_m``; ``inpaint`` chooses whether they are written back as is or
    noised to step m - 1. ``guide_grad(x) -> dJ/dx`` enables classifier
    guidance. With
    ``clip`` set, the clean sample implied by the noise prediction is
    clipped to [-clip, clip] before forming the mean.
    """
    if not 1 <= m <= sched.M:
        raise DiffusionError(f"step {m} outside 1..{sched.M}")
    a, ab = sched.alphas[m], sched.alpha_bars[m]
    eps = eps_fn(x_m, np.full(len(x_m), m), levels, mask)
    if clip is None:
        mu = (x_m - (1.0 - a) / math.sqrt(max(1.0 - ab, 1e-20)) * eps) / math.sqrt(a)
    else:
        # same mean written through the implied clean sample, which is clipped
        x0 = np.clip((x_m - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab), -clip, clip)
        ab_prev = sched.alpha_bars[m - 1]
        denom = max(1.0 - ab, 1e-20)
        mu = (math.sqrt(ab_prev) * (1.0 - a) / denom * x0
              + math.sqrt(a) * (1.0 - ab_prev) / denom * x_m)
    sigma = sched.sigmas[m]
    if guide_grad is not None and guide_scale != 0.0 and sigma > 0:
        mu = mu + guide_scale * sigma ** 2 * guide_grad(x_m)
    if m > 1 and sigma > 0:
        out = mu + sigma * _draw(rngs, x_m.shape[1:])
    else:
        out = mu
    out = out.astype(np.float32)
    if mask is not None:
        out = _inpaint(out, mask, target, m - 1, sched, rngs, inpaint)
    return out


def run_reverse_chain(eps_fn: EpsFn, sched: DiffusionSchedule, shape: tuple[int, ...],
                      rngs: Sequence[RngStream], mask=None, target=None, levels=None,
                      guide_grad=None, guide_scale: float = 0.0,
                      clip: float | None = None, inpaint: str = "clean") -> np.ndarray:
    """Start from N(0, I) and apply denoise_step for m = M..1."""
    if len(rngs) != shape[0]:
        raise DiffusionError(f"need one random stream per batch row ({shape[0]}), got {len(rngs)}")
    x = _draw(rngs, shape[1:])
    if mask is not None:
        x = _inpaint(x, mask, target, sched.M, sched, rngs, inpaint)
    for m in range(sched.M, 0, -1):
        x = denoise_step(eps_fn, x, m, sched, mask, target, levels, rngs, guide_grad, guide_scale,
                         clip, inpaint)
    return x


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    clip_norm: float | None = 10.0
    log_every: int = 100


class DiffusionModel:
    """A denoiser, its parameters, noise schedule and state normalizer."""

    def __init__(self, spec: DenoiserSpec, sched: DiffusionSchedule, normalizer: Normalizer,
                 params: ParameterSet | None = None, rng: RngStream | None = None,
                 meta: dict | None = None):
        self.spec = spec
        self.sched = sched
        self.normalizer = normalizer
        self.net = TemporalUNet(spec)
        if params is None:
            params = self.net.init(rng if rng is not None else RngStream(0))
        self.params = params
        self.meta = dict(meta or {})
        self.clip = self.meta.get("clip", 1.0)
        self.inpaint = self.meta.get("inpaint", "clean")
        if self.inpaint not in INPAINT_MODES:
            raise DiffusionError(f"inpaint mode must be one of {INPAINT_MODES}")
        self.history: list[float] = []

    def eps(self, x: np.ndarray, m: np.ndarray, levels=None, cond_mask=None) -> np.ndarray:
        with no_grad():
            return self.net(self.params, x, m, levels, cond_mask).data

    def loss(self, x0: np.ndarray, m: np.ndarray, noise: np.ndarray, levels=None,
             loss_mask: np.ndarray | None = None) -> Tensor:
        x_m = q_sample(x0, m, noise, self.sched)
        if loss_mask is not None and self.inpaint == "clean":
            # the sampler holds constrained entries clean, so training does too
            x_m = np.where(loss_mask[..., None], x_m, x0)
        cond = None if loss_mask is None else ~loss_mask
        pred = self.net(self.params, x_m, m, levels, cond)
        diff = pred - Tensor(noise)
        if loss_mask is not None:
            diff = diff * Tensor(loss_mask[..., None].astype(np.float32))
        per_row = (diff * diff).sum(axis=(1, 2))
        return per_row.mean()

    def save(self, path) -> None:
        meta = dict(self.meta)
        meta.update({"denoiser": asdict(self.spec), "schedule_kind": self.sched.kind,
                     "M": self.sched.M, "normalizer": self.normalizer.to_meta(),
                     "alphas": self.sched.alphas[1:].tolist(), "clip": self.clip,
                     "inpaint": self.inpaint})
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "DiffusionModel":
        params, meta = load_checkpoint(path)
        spec = DenoiserSpec(**meta["denoiser"])
        sched = DiffusionSchedule.from_alphas(meta["alphas"], meta["schedule_kind"])
        norm = Normalizer.from_meta(meta["normalizer"])
        keep = {k: v for k, v in meta.items() if k not in ("denoiser", "alphas", "normalizer")}
        return cls(spec, sched, norm, params=params, meta=keep)


def train_step(model: DiffusionModel, x0: np.ndarray, rng: RngStream, levels=None,
               loss_mask: np.ndarray | None = None, cfg: TrainConfig | None = None) -> float:
    """One denoising-objective step on a batch of normalized windows."""
    cfg = cfg or TrainConfig()
    if len(x0) == 0:
        raise DiffusionError("empty batch")
    bsz = len(x0)
    m = rng.integers(1, model.sched.M + 1, size=bsz)
    noise = rng.normal(x0.shape)
    loss = model.loss(x0, m, noise, levels, loss_mask)
    grads = gradients(model.params, loss)
    adam_step(model.params, grads, cfg.lr, cfg.beta1, cfg.beta2, clip_norm=cfg.clip_norm)
    value = float(loss.data)
    model.history.append(value)
    return value


def train(model: DiffusionModel, batch_fn: Callable[[RngStream, int], tuple], cfg: TrainConfig,
          rng: RngStream, log: Callable[[str], None] | None = None) -> list[float]:
    """Run ``cfg.steps`` steps; ``batch_fn(rng, batch) -> (x0, levels, loss_mask)``.

    Step ``i`` draws from ``rng.child(i)`` so a run resumed from a checkpoint
    at step ``i`` continues exactly as the uninterrupted run would.
    """
    losses = []
    start = model.params.step
    for i in range(start, cfg.steps):
        step_rng = rng.child(i)
        x0, levels, mask = batch_fn(step_rng, cfg.batch)
        losses.append(train_step(model, x0, step_rng, levels, mask, cfg))
        if log and (i + 1) % cfg.log_every == 0:
            log(f"step {i + 1}/{cfg.steps} loss {np.mean(losses[-cfg.log_every:]):.4f}")
    return losses


def sample_window(model: DiffusionModel, constraints: Constraint, level=None,
                  rngs: Sequence[RngStream] | RngStream = (), window: int | None = None,
                  guide: Callable[[Tensor], Tensor] | None = None,
                  guide_scale: float = 0.0) -> np.ndarray:
    """Sample windows (state space) that pass through the constrained states.

    One random stream per row; a single stream is used for a single row.
    Constrained entries of the result are the targets exactly.
    """
    if isinstance(rngs, RngStream):
        rngs = [rngs]
    if not constraints.mask.any(axis=1).all():
        raise DiffusionError("every row needs at least one constrained index")
    bsz, w = constraints.mask.shape
    if window is not None and window != w:
        raise DiffusionError(f"constraint window {w} != requested window {window}")
    target = model.normalizer(constraints.values)
    levels = None
    if model.spec.level_embedding:
        levels = np.broadcast_to(np.asarray(1 if level is None else level), (bsz,))
    guide_grad = None
    if guide is not None:
        guide_grad = _guide_gradient(guide, model.normalizer)
    x = run_reverse_chain(model.eps, model.sched, (bsz, w, model.spec.state_dim), rngs,
                          constraints.mask, target, levels, guide_grad, guide_scale, model.clip,
                          model.inpaint)
    out = model.normalizer.inverse(x)
    out[constraints.mask] = constraints.values[constraints.mask]
    return out


def _guide_gradient(guide, normalizer: Normalizer):
    def grad(x: np.ndarray) -> np.ndarray:
        from .tensor import backward
        xt = Tensor(x.astype(np.float64), requires_grad=True, name="x")
        value = guide(xt)
        named = backward(value.sum())
        return named.get("x", np.zeros_like(x)).astype(np.float32)
    return grad


def guided_sample(model: DiffusionModel, constraints: Constraint, guide, scale: float,
                  rngs, level=None) -> np.ndarray:
    """Classifier-guided sampling toward high ``guide`` values (normalized space)."""
    return sample_window(model, constraints, level, rngs, guide=guide, guide_scale=scale)


def sparse_view(states: np.ndarray, j: int, k: int, offset: int) -> np.ndarray:
    """States at offset, offset + j, ..., offset + j * k."""
    n = len(states)
    if offset < 0 or offset + j * k >= n:
        raise DiffusionError(f"sparse view (offset {offset}, stride {j}, jumps {k}) exceeds "
                             f"trajectory of {n} states")
    return states[offset:offset + j * k + 1:j]


class WindowSampler:
    """Draws sparse training windows from a set of trajectories.

    ``levels`` maps a level to (stride, jumps); each call picks one level
    uniformly and returns a batch of its windows, normalized. With
    ``tail_prob > 0`` each row additionally holds a clean tail of random
    length (at least one free entry is left after index 0) with that
    probability, which teaches a mask-aware model to meet end constraints.
    """

    def __init__(self, trajectories: Sequence[np.ndarray], levels: dict[int, tuple[int, int]],
                 normalizer: Normalizer, constrained: Sequence[int] = (0, -1),
                 level_conditioned: bool = True, tail_prob: float = 0.0):
        self.all_states = np.concatenate(trajectories).astype(np.float32)
        starts = np.cumsum([0] + [len(t) for t in trajectories])[:-1]
        lengths = np.array([len(t) for t in trajectories])
        self.levels = {}
        for lv, (j, k) in levels.items():
            span = j * k
            offs = [s + np.arange(n - span) for s, n in zip(starts, lengths) if n > span]
            if offs:
                self.levels[lv] = (j, k, np.concatenate(offs))
        if not self.levels:
            raise DiffusionError("no trajectory is long enough for any level")
        self.normalizer = normalizer
        self.constrained = tuple(constrained)
        self.level_conditioned = level_conditioned
        self.tail_prob = tail_prob
        self.level_counts = {lv: 0 for lv in self.levels}

    def __call__(self, rng: RngStream, batch: int):
        keys = sorted(self.levels)
        lv = keys[int(rng.integers(len(keys)))]
        self.level_counts[lv] += 1
        j, k, starts = self.levels[lv]
        pick = starts[rng.integers(len(starts), size=batch)]
        idx = pick[:, None] + j * np.arange(k + 1)[None]
        x0 = self.normalizer(self.all_states[idx])
        mask = np.ones((batch, k + 1), dtype=bool)
        for c in self.constrained:
            mask[:, c] = False
        if self.tail_prob > 0 and k >= 2:
            tails = rng.integers(1, k, size=batch)
            use = rng.uniform(0.0, 1.0, batch) < self.tail_prob
            pos = np.arange(k + 1)[None]
            mask &= ~(use[:, None] & (pos >= k + 1 - tails[:, None]))
        levels = np.full(batch, lv) if self.level_conditioned else None
        return x0, levels, mask
