"""Minibatch training loop."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import DataSplit, Dataset
from ..errors import ConfigError, DivergenceError
from .model import Model
from .ops import softmax_xent
from .optim import make_optimizer, scheduled_lr


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: dict = field(default_factory=lambda: {"type": "constant"})
    batch_size: int = 128
    epochs: int = 5
    seed: int = 0
    clamp_v: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("lr, batch_size and epochs must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def make_optimizer(self):
        if self.optimizer == "adam":
            return make_optimizer("adam", lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                                  eps=self.eps)
        return make_optimizer("sgd", lr=self.lr, momentum=self.momentum)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    train_accuracy: float
    test_accuracy: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    final_test_accuracy: float
    wall_clock_seconds: float
    steps: int
    trainable_params: int
    non_trainable_params: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy(model: Model, ds: Dataset, batch_size: int = 256) -> float:
    if len(ds) == 0:
        return float("nan")
    logits = model.predict(ds.x, batch_size)
    return float((logits.argmax(axis=1) == ds.y).mean())


def train(model: Model, data: DataSplit, cfg: TrainConfig, on_step=None,
          log=None) -> TrainReport:
    """Train ``model`` in place.

    ``on_step(model, step)`` runs after each optimizer step and the ``v >= 0``
    projection; ``log`` receives one line per epoch.
    """
    train_ds = data.train
    if train_ds.x.shape[1:] != model.input_shape:
        raise ConfigError(f"dataset shape {train_ds.x.shape[1:]} != model input "
                          f"{model.input_shape}")
    if train_ds.num_classes > model.output_shape[0]:
        raise ConfigError(f"{train_ds.num_classes} classes but {model.output_shape[0]} outputs")
    rng = np.random.default_rng(cfg.seed)
    opt = cfg.make_optimizer()
    params = model.parameters()
    frozen = model.frozen()
    records = []
    steps = 0
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = scheduled_lr(cfg.lr, cfg.schedule, epoch, cfg.epochs)
        order = rng.permutation(len(train_ds))
        total_loss, correct = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            logits, tape = model.forward(train_ds.x[idx], training=True)
            loss, dlogits = softmax_xent(logits, train_ds.y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at epoch {epoch}, step {steps}")
            _, grads = model.backward(tape, dlogits)
            opt.step(params, grads, lr=lr, frozen=frozen)
            if cfg.clamp_v:
                model.after_step()
            steps += 1
            if on_step is not None:
                on_step(model, steps)
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == train_ds.y[idx]).sum())
        rec = EpochRecord(epoch + 1, lr, total_loss / len(order), correct / len(order),
                          accuracy(model, data.test), time.perf_counter() - t0)
        records.append(rec)
        if log is not None:
            log(f"epoch {rec.epoch}: loss {rec.loss:.4f} train {rec.train_accuracy:.4f} "
                f"test {rec.test_accuracy:.4f} ({rec.seconds:.1f}s)")
    return TrainReport(records, records[-1].test_accuracy, time.perf_counter() - start, steps,
                       model.trainable_count(), model.non_trainable_count())
