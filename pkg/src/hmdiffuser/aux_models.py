"""Supervised helpers: inverse dynamics, reward model and the depth predictor."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import DatasetError, TrajectoryDataset
from .hierarchy import HierarchySpec, label_depth
from .nn import MLP, Normalizer, ParameterSet, adam_step, gradients
from .rng import RngStream
from .tensor import Tensor, log_softmax, no_grad

ACTION_LOW, ACTION_HIGH = -1.0, 1.0


@dataclass
class FitConfig:
    epochs: int = 20
    batch: int = 256
    lr: float = 1e-3
    hidden: int = 256


def _fit(params: ParameterSet, loss_fn: Callable[[np.ndarray], Tensor], n: int, cfg: FitConfig,
         rng: RngStream) -> list[float]:
    """Minibatch Adam over ``n`` examples; ``loss_fn(indices)`` builds the loss."""
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.child(epoch).permutation(n)
        for start in range(0, n, cfg.batch):
            loss = loss_fn(order[start:start + cfg.batch])
            adam_step(params, gradients(params, loss), cfg.lr)
            losses.append(float(loss.data))
    return losses


class _Regressor:
    """MLP with input and output scaling, stored with its role in the checkpoint."""

    role = "regressor"

    def __init__(self, sizes, in_norm: Normalizer, out_scale: np.ndarray, params=None,
                 rng: RngStream | None = None):
        self.net = MLP(tuple(sizes), "relu", prefix=self.role)
        self.in_norm = in_norm
        self.out_scale = np.asarray(out_scale, dtype=np.float32)
        self.params = params if params is not None else self.net.init(rng or RngStream(0))

    def features(self, *xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def raw(self, *xs: np.ndarray) -> np.ndarray:
        with no_grad():
            out = self.net(self.params, Tensor(self.features(*xs))).data
        return out * self.out_scale

    def save(self, path) -> None:
        save_checkpoint(path, self.params, {"role": self.role, "sizes": list(self.net.sizes),
                                            "in_norm": self.in_norm.to_meta(),
                                            "out_scale": self.out_scale.tolist()})

    @classmethod
    def load(cls, path):
        params, meta = load_checkpoint(path)
        if meta.get("role") != cls.role:
            raise DatasetError(f"{path} holds a {meta.get('role')!r} model, not {cls.role!r}")
        return cls(meta["sizes"], Normalizer.from_meta(meta["in_norm"]),
                   np.array(meta["out_scale"]), params=params)


class InverseDynModel(_Regressor):
    """f_a(s, s') -> a. Features are the normalized state and the scaled state change."""

    role = "invdyn"

    def features(self, s, s_next):
        s = np.atleast_2d(np.asarray(s, dtype=np.float32))
        s_next = np.atleast_2d(np.asarray(s_next, dtype=np.float32))
        d = s.shape[1]
        # in_norm covers [s, s' - s]; the change spans about [-1, 1] after scaling
        both = self.in_norm(np.concatenate([s, s_next - s], axis=1))
        both[:, d:] = (s_next - s) / self.in_norm._span[d:].astype(np.float32)
        return both


def infer_action(model: InverseDynModel, s, s_next) -> np.ndarray:
    """Predicted action(s), clamped to the action bounds."""
    single = np.asarray(s).ndim == 1
    a = np.clip(model.raw(s, s_next), ACTION_LOW, ACTION_HIGH).astype(np.float32)
    return a[0] if single else a


def _transitions(ds: TrajectoryDataset):
    s = np.concatenate([t.states[:-1] for t in ds])
    s2 = np.concatenate([t.states[1:] for t in ds])
    a = np.concatenate([t.actions for t in ds])
    r = np.concatenate([t.rewards for t in ds])
    return s, s2, a, r


def train_invdyn(ds: TrajectoryDataset, epochs: int, rng: RngStream,
                 cfg: FitConfig | None = None) -> InverseDynModel:
    cfg = cfg or FitConfig(epochs=epochs)
    cfg.epochs = epochs
    if len(ds) == 0:
        raise DatasetError("cannot train inverse dynamics on an empty dataset")
    if ds.action_dim == 0:
        raise DatasetError("dataset has no actions")
    s, s2, a, _ = _transitions(ds)
    d = ds.state_dim
    delta = s2 - s
    low = np.concatenate([s.min(axis=0), np.zeros(d)])
    span = np.concatenate([s.max(axis=0) - s.min(axis=0), np.maximum(np.abs(delta).max(axis=0), 1e-6)])
    norm = Normalizer(low, low + span)
    model = InverseDynModel((2 * d, cfg.hidden, cfg.hidden, ds.action_dim), norm,
                            np.ones(ds.action_dim), rng=rng.child(0))
    x = model.features(s, s2)
    y = a.astype(np.float32)

    def loss_fn(idx):
        diff = model.net(model.params, Tensor(x[idx])) - Tensor(y[idx])
        return (diff * diff).sum(axis=1).mean()

    model.losses = _fit(model.params, loss_fn, len(x), cfg, rng.child(1))
    return model


class RewardModel(_Regressor):
    role = "reward"

    def features(self, s, a):
        s = np.atleast_2d(np.asarray(s, dtype=np.float32))
        a = np.atleast_2d(np.asarray(a, dtype=np.float32))
        return self.in_norm(np.concatenate([s, a], axis=1))


def predict_reward(model: RewardModel, s, a) -> np.ndarray:
    single = np.asarray(s).ndim == 1
    r = model.raw(s, a)[:, 0].astype(np.float32)
    return r[0] if single else r


def train_reward(ds: TrajectoryDataset, epochs: int, rng: RngStream,
                 cfg: FitConfig | None = None) -> RewardModel:
    cfg = cfg or FitConfig(epochs=epochs)
    cfg.epochs = epochs
    if ds.n_transitions() == 0:
        raise DatasetError("cannot train a reward model on an empty dataset")
    s, _, a, r = _transitions(ds)
    norm = Normalizer.fit(np.concatenate([s, a], axis=1))
    model = RewardModel((ds.state_dim + ds.action_dim, cfg.hidden, cfg.hidden, 1), norm,
                        np.ones(1), rng=rng.child(0))
    x = model.features(s, a)
    y = r.reshape(-1, 1).astype(np.float32)

    def loss_fn(idx):
        diff = model.net(model.params, Tensor(x[idx])) - Tensor(y[idx])
        return (diff * diff).mean()

    model.losses = _fit(model.params, loss_fn, len(x), cfg, rng.child(1))
    return model


class DepthPredictor:
    """f_phi(s0, s_g) -> level in 1..L.

    Reads the first ``n_features`` dims of the start and the first
    ``goal_dims`` of the goal; the remaining goal dims are zeroed, since
    evaluation goals are positions with no meaningful velocity.
    """

    role = "depth"

    def __init__(self, n_levels: int, n_features: int, norm: Normalizer, hidden: int = 256,
                 params: ParameterSet | None = None, rng: RngStream | None = None,
                 goal_dims: int = 2):
        self.n_levels = n_levels
        self.n_features = n_features
        self.goal_dims = min(goal_dims, n_features)
        self.norm = norm
        self.net = MLP((2 * n_features, hidden, hidden, n_levels), "relu", prefix="depth")
        self.params = params if params is not None else self.net.init(rng or RngStream(0))

    def features(self, s0, sg) -> np.ndarray:
        s0 = np.atleast_2d(np.asarray(s0, dtype=np.float32))[:, :self.n_features]
        sg = np.atleast_2d(np.asarray(sg, dtype=np.float32))[:, :self.n_features].copy()
        sg[:, self.goal_dims:] = 0.0
        return np.concatenate([self.norm(s0), self.norm(sg)], axis=1)

    def logits(self, s0, sg) -> np.ndarray:
        with no_grad():
            return self.net(self.params, Tensor(self.features(s0, sg))).data

    def save(self, path) -> None:
        save_checkpoint(path, self.params, {"role": self.role, "n_levels": self.n_levels,
                                            "n_features": self.n_features,
                                            "goal_dims": self.goal_dims,
                                            "hidden": self.net.sizes[1],
                                            "norm": self.norm.to_meta()})

    @classmethod
    def load(cls, path) -> "DepthPredictor":
        params, meta = load_checkpoint(path)
        if meta.get("role") != cls.role:
            raise DatasetError(f"{path} holds a {meta.get('role')!r} model, not a depth predictor")
        return cls(meta["n_levels"], meta["n_features"], Normalizer.from_meta(meta["norm"]),
                   meta["hidden"], params=params, goal_dims=meta.get("goal_dims", 2))


def levels_from_logits(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=-1) + 1


def predict_depth(model: DepthPredictor, s0, sg):
    single = np.asarray(s0).ndim == 1
    lv = levels_from_logits(model.logits(s0, sg))
    return int(lv[0]) if single else lv


def depth_corpus(ds: TrajectoryDataset, hierarchy: HierarchySpec, n: int, rng: RngStream,
                 max_len: int | None = None, margin: float = 0.0,
                 labeler: Callable[[int, HierarchySpec], int] = label_depth):
    """(s0, s_g, label) triples from random sub-segments of ``ds``.

    With ``margin > 0`` only lengths whose step count is at least a factor
    ``1 + margin`` away from every level horizon are kept.
    """
    trajs = [t for t in ds if len(t) >= 2]
    if not trajs:
        raise DatasetError("no trajectory with at least two states")
    horizons = np.array(hierarchy.horizons[:-1], dtype=np.float64)
    s0, sg, labels = [], [], []
    attempts = 0
    while len(labels) < n:
        attempts += 1
        if attempts > 100 * n:
            raise DatasetError("could not draw enough sub-segments under the length margin")
        t = trajs[int(rng.integers(len(trajs)))]
        top = len(t) if max_len is None else min(len(t), max_len)
        length = int(rng.integers(2, top + 1))
        steps = length - 1
        if margin > 0 and np.any((steps > horizons / (1 + margin)) & (steps < horizons * (1 + margin))):
            continue
        off = int(rng.integers(0, len(t) - length + 1))
        s0.append(t.states[off])
        sg.append(t.states[off + length - 1])
        labels.append(labeler(length, hierarchy))
    return np.array(s0), np.array(sg), np.array(labels)


def train_depth(s0: np.ndarray, sg: np.ndarray, labels: np.ndarray, hierarchy: HierarchySpec,
                epochs: int, rng: RngStream, cfg: FitConfig | None = None,
                n_features: int | None = None, norm: Normalizer | None = None,
                goal_dims: int = 2) -> DepthPredictor:
    """Cross-entropy training on labelled (start, goal) pairs."""
    cfg = cfg or FitConfig(epochs=epochs)
    cfg.epochs = epochs
    if len(labels) == 0:
        raise DatasetError("no depth training examples")
    if len(np.unique(labels)) < 2:
        warnings.warn("depth labels take a single value; the predictor will be constant", stacklevel=2)
    n_features = n_features or np.asarray(s0).shape[1]
    if norm is None:
        norm = Normalizer.fit(np.asarray(s0)[:, :n_features])
    model = DepthPredictor(hierarchy.L, n_features, norm, cfg.hidden, rng=rng.child(0),
                           goal_dims=goal_dims)
    x = model.features(s0, sg)
    onehot = np.zeros((len(labels), hierarchy.L), dtype=np.float32)
    onehot[np.arange(len(labels)), np.asarray(labels) - 1] = 1.0

    def loss_fn(idx):
        logp = log_softmax(model.net(model.params, Tensor(x[idx])))
        return -(logp * Tensor(onehot[idx])).sum(axis=1).mean()

    model.losses = _fit(model.params, loss_fn, len(x), cfg, rng.child(1))
    return model
