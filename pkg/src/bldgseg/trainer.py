"""Mini-batch SGD with momentum and weight decay."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .netgraph import NetworkSpec, ParamSet, backward, forward, init_params

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-5
    batch_size: int = 5
    epochs: int = 10
    seed: int = 0
    validation_fraction: float = 0.1
    precision: int = 64

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


class TrainingDiverged(RuntimeError):
    pass


def sgd_update(params: ParamSet, grads: dict, config: TrainConfig):
    """In-place update: v <- m*v - wd*lr*w - lr*g; w <- w + v. Biases skip weight decay."""
    lr, mom = config.learning_rate, config.momentum
    for name, w in params.arrays.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        wd = 0.0 if name.endswith(".b") else config.weight_decay
        v = params.velocity[name]
        v *= mom
        v -= wd * lr * w
        v -= lr * g
        w += v
    return params


@dataclass
class Sample:
    """Training pair: H x W x 3 image and class indices (0..127) at output resolution."""

    image: np.ndarray
    labels: np.ndarray
    name: str = ""


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_error: float
    wall_time: float

    def to_line(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.17g}\t{self.val_error:.17g}\t{self.wall_time:.3f}"


@dataclass
class TrainResult:
    params: ParamSet
    best_params: ParamSet
    log: list = field(default_factory=list)
    train_indices: list = field(default_factory=list)
    val_indices: list = field(default_factory=list)


def predicted_classes(spec, params, image):
    probs, _ = forward(spec, params, image)
    return probs.argmax(axis=-1)


def validate(spec: NetworkSpec, params: ParamSet, samples) -> float:
    """Fraction of pixels whose arg-max class differs from the label."""
    wrong = total = 0
    for s in samples:
        pred = predicted_classes(spec, params, s.image)
        wrong += int((pred != s.labels).sum())
        total += s.labels.size
    return wrong / total if total else 0.0


def split_indices(n: int, fraction: float, seed: int):
    """Seeded split into (train, validation) index lists."""
    rng = np.random.default_rng([seed, 1])
    order = rng.permutation(n)
    nval = int(round(fraction * n))
    if nval >= n:
        nval = n - 1
    return sorted(order[nval:].tolist()), sorted(order[:nval].tolist())


def batch_gradient(spec, params, batch):
    """Mean loss and mean gradients over a batch, accumulated in float64."""
    total = 0.0
    acc = None
    for s in batch:
        _, cache = forward(spec, params, s.image, keep_intermediates=True)
        loss, grads = backward(spec, params, cache, s.labels)
        total += loss
        if acc is None:
            acc = {k: g.astype(np.float64) for k, g in grads.items()}
        else:
            for k, g in grads.items():
                acc[k] += g
    n = len(batch)
    return total / n, {k: (g / n).astype(params.dtype) for k, g in acc.items()}


def train(spec: NetworkSpec, dataset, config: TrainConfig, params: ParamSet | None = None,
          log_file=None) -> TrainResult:
    """Train on `dataset` (a list of Sample) and keep the best-validation parameters.

    When the validation split is empty the training samples stand in for it.
    Each epoch appends one tab-separated line to `log_file` if given.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if params is None:
        params = init_params(spec, config.seed, config.dtype)
    else:
        params = params.astype(config.dtype)
    train_idx, val_idx = split_indices(len(dataset), config.validation_fraction, config.seed)
    train_set = [dataset[i] for i in train_idx]
    val_set = [dataset[i] for i in val_idx] or train_set

    rng = np.random.default_rng(config.seed)
    result = TrainResult(params, params.copy(), [], train_idx, val_idx)
    best = math.inf
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            loss, grads = batch_gradient(spec, params, batch)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            sgd_update(params, grads, config)
            losses.append(loss * len(batch))
        train_loss = sum(losses) / len(train_set)
        val_err = validate(spec, params, val_set)
        rec = EpochRecord(epoch, train_loss, val_err, time.perf_counter() - t0)
        result.log.append(rec)
        log.info("epoch %d loss %.5f val_err %.4f (%.1fs)", epoch, train_loss, val_err, rec.wall_time)
        if log_file is not None:
            log_file.write(rec.to_line() + "\n")
            log_file.flush()
        if val_err < best:
            best = val_err
            result.best_params = params.copy()
    return result
