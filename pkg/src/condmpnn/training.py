"""Adam with decoupled weight decay, cosine schedule and the training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .message_passing import EgnnModel, Graph, GraphBatch
from .tensor import Tensor

__all__ = [
    "AdamState",
    "CosineSchedule",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "adam_step",
    "lr_at",
    "mae",
    "evaluate",
    "train",
]

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-16

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kw) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params], **kw)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState,
              lr: float) -> None:
    """Bias-corrected Adam update applied in place.

    Weight decay is decoupled: ``p <- p - lr * wd * p`` before the Adam delta.
    A ``None`` gradient counts as zero.
    """
    if lr < 0:
        raise ValueError("lr must be nonnegative")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise T.DimensionError("params, grads and optimizer state have different lengths")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.zeros(p.shape) if g is None else g
        if g.shape != p.shape:
            raise T.DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class CosineSchedule:
    base_lr: float = 5e-4
    total_steps: int = 1
    min_lr: float = 0.0


def lr_at(schedule: CosineSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if schedule.total_steps == 0:
        return schedule.base_lr
    frac = step / schedule.total_steps
    return schedule.min_lr + 0.5 * (schedule.base_lr - schedule.min_lr) * (1.0 + math.cos(math.pi * frac))


def mae(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise T.DimensionError(f"{p.shape} predictions for {t.shape} targets")
    return float(np.mean(np.abs(p - t)))


def evaluate(model: EgnnModel, dataset: Sequence[Graph], threads: int = 1) -> float:
    """Mean absolute error over graphs, reduced in index order."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    return mae(model.predict(dataset, threads=threads), [g.target for g in dataset])


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 96
    lr: float = 5e-4
    min_lr: float = 0.0
    weight_decay: float = 1e-16
    seed: int = 0
    metrics_path: str | Path | None = None
    trainable: Sequence[str] | None = None  # parameter names; None means all
    standardize: bool = False
    threads: int = 1  # evaluation workers


@dataclass
class TrainResult:
    model: EgnnModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = math.inf
    best_state: dict | None = None

    def final(self, split: str = "val") -> float:
        rows = [r for r in self.history if r["split"] == split]
        return rows[-1]["mae"] if rows else math.nan


def _diagnose(model: EgnnModel, graphs: Sequence[Graph], idx: Sequence[int], exc: Exception) -> str:
    for name, p in model.named_parameters().items():
        if not np.isfinite(p.data).all():
            return f"parameter {name} holds non-finite values ({exc})"
    with T.finite_checks(True):
        for i in idx:
            try:
                model(graphs[i])
            except T.NonFiniteError:
                return f"graph {i} yields a non-finite prediction ({exc})"
    for i in idx:
        if not np.isfinite(graphs[i].target):
            return f"graph {i} has a non-finite target ({exc})"
    return f"non-finite loss in batch starting with graph {idx[0]} ({exc})"


def train(model: EgnnModel, train_set: Sequence[Graph], val_set: Sequence[Graph] | None = None,
          config: TrainConfig | None = None) -> TrainResult:
    """Mini-batch training on the MAE objective.

    Metrics for epoch 0 describe the untrained model. Each later epoch
    shuffles with a permutation seeded by ``(seed, epoch)``. The train MAE of
    an epoch averages the per-graph errors of the predictions made during
    that epoch (before each update), reduced in graph-index order; validation
    MAE is a full evaluation after the epoch.
    """
    cfg = config or TrainConfig()
    if not train_set:
        raise ValueError("training set is empty")
    val_set = val_set or []
    named = model.named_parameters()
    names = list(named) if cfg.trainable is None else list(cfg.trainable)
    unknown = [n for n in names if n not in named]
    if unknown:
        raise KeyError(f"unknown parameters: {unknown}")
    params = [named[n] for n in names]
    if cfg.standardize:
        ys = np.array([g.target for g in train_set])
        model.output_shift = float(ys.mean())
        model.output_scale = float(ys.std()) or 1.0
    state = AdamState.for_params(params, weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    schedule = CosineSchedule(cfg.lr, max(cfg.epochs * steps_per_epoch, 1), cfg.min_lr)
    result = TrainResult(model)
    sink = open(cfg.metrics_path, "w") if cfg.metrics_path else None
    step = 0

    def record(epoch: int, wall_ms: float, train_mae: float | None = None):
        lr_now = lr_at(schedule, min(step, schedule.total_steps))
        for split, data in (("train", train_set), ("val", val_set)):
            if not data:
                continue
            score = train_mae if split == "train" and train_mae is not None else evaluate(model, data, cfg.threads)
            row = {"epoch": epoch, "split": split, "mae": score, "lr": lr_now, "wall_ms": wall_ms}
            result.history.append(row)
            if sink:
                sink.write(json.dumps(row) + "\n")
        score = result.history[-1]["mae"] if val_set else math.nan
        if val_set and score < result.best_val_mae:
            result.best_val_mae, result.best_epoch = score, epoch
            result.best_state = model.state_dict()

    try:
        record(0, 0.0)
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
            abs_err = np.zeros(len(train_set))
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                batch = GraphBatch.from_graphs([train_set[i] for i in idx])
                try:
                    pred = model.forward_batch(batch)
                    loss = T.mean(T.abs_(pred - T.tensor(batch.targets)))
                    if not np.isfinite(loss.data):
                        raise T.NonFiniteError("loss is not finite")
                except T.NonFiniteError as exc:
                    raise TrainingDiverged(_diagnose(model, train_set, idx, exc)) from exc
                abs_err[idx] = np.abs(pred.data - batch.targets)
                for p in named.values():
                    p.grad = None
                T.backward(loss)
                adam_step(params, [p.grad for p in params], state, lr_at(schedule, step))
                step += 1
            wall_ms = (time.perf_counter() - t0) * 1e3
            record(epoch, wall_ms, float(np.mean(abs_err)))
            log.debug("epoch %d: %s", epoch, result.history[-1])
    finally:
        if sink:
            sink.close()
    return result
