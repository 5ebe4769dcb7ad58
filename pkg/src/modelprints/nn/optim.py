"""Optimizers and the two-phase training loop (frozen head, then finetune)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DivergedError, UsageError
from .network import Network, softmax_xent

__all__ = ["OptimizerConfig", "TrainSchedule", "Adamax", "SGD", "make_optimizer", "train_classifier"]


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "adamax"
    learning_rate: float = 0.0005
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.algorithm not in ("adamax", "sgd"):
            raise UsageError("usage", f"unknown optimizer {self.algorithm!r}")
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise UsageError("usage", f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise UsageError("usage", f"batch size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise UsageError("usage", "betas must lie in [0, 1)")


@dataclass(frozen=True)
class TrainSchedule:
    frozen_epochs: int = 3
    finetune_epochs: int = 15
    rng_seed: int = 0

    def __post_init__(self):
        if self.frozen_epochs < 0 or self.finetune_epochs < 0:
            raise UsageError("usage", "epoch counts must be non-negative")
        if self.frozen_epochs + self.finetune_epochs == 0:
            raise UsageError("usage", "schedule trains for zero epochs")


class Adamax:
    """Adamax: Adam variant with an infinity-norm second moment."""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self._m: dict[int, np.ndarray] = {}
        self._u: dict[int, np.ndarray] = {}
        self._t = 0

    def step(self, pairs, lr: float | None = None):
        """pairs: iterable of (param_array, grad_array), updated in place."""
        cfg = self.cfg
        rate = cfg.learning_rate if lr is None else lr
        self._t += 1
        bias = 1.0 - cfg.beta1 ** self._t
        for param, grad in pairs:
            key = id(param)
            m = self._m.get(key)
            if m is None:
                m = self._m[key] = np.zeros_like(param)
                self._u[key] = np.zeros_like(param)
            u = self._u[key]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * grad
            np.maximum(cfg.beta2 * u, np.abs(grad), out=u)
            param -= (rate / bias) * m / (u + cfg.epsilon)


class SGD:
    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg

    def step(self, pairs, lr: float | None = None):
        rate = self.cfg.learning_rate if lr is None else lr
        for param, grad in pairs:
            param -= rate * grad


def make_optimizer(cfg: OptimizerConfig):
    return Adamax(cfg) if cfg.algorithm == "adamax" else SGD(cfg)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_classifier(net: Network, x: np.ndarray, y: np.ndarray,
                     opt_cfg: OptimizerConfig, schedule: TrainSchedule,
                     log=None) -> list[float]:
    """Train a softmax-xent network; returns mean loss per epoch.

    Phase 1 trains only the final parameterized layer for
    ``schedule.frozen_epochs`` epochs; every other weight stays bitwise
    unchanged. Phase 2 finetunes all layers. A non-finite batch loss stops
    training with a diverged error carrying the epoch index.
    """
    x = np.asarray(x, dtype=net.dtype)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    rng = np.random.default_rng(schedule.rng_seed)
    head = net.trainable_layers()[-1]
    curve: list[float] = []
    phases = [("frozen", schedule.frozen_epochs, [head]),
              ("finetune", schedule.finetune_epochs, net.trainable_layers())]
    epoch = 0
    for phase_name, n_epochs, active in phases:
        if n_epochs == 0:
            continue
        optimizer = make_optimizer(opt_cfg)
        active_set = {id(lay) for lay in active}
        for _ in range(n_epochs):
            total, seen = 0.0, 0
            for batch in _epoch_batches(n, opt_cfg.batch_size, rng):
                net.zero_grads()
                logits = net.forward(x[batch])
                loss, dlogits, _ = softmax_xent(logits, y[batch])
                if not np.isfinite(loss):
                    raise DivergedError(f"non-finite loss in epoch {epoch} ({phase_name})", epoch=epoch)
                net.backward(dlogits.astype(net.dtype))
                pairs = [(lay.params[k], lay.grads[k])
                         for lay in net.trainable_layers() if id(lay) in active_set
                         for k in lay.params]
                optimizer.step(pairs)
                total += loss * len(batch)
                seen += len(batch)
            curve.append(total / seen)
            if log is not None:
                log(f"epoch {epoch} ({phase_name}): loss {curve[-1]:.4f}")
            epoch += 1
    return curve
