"""Minibatch training and evaluation over dataset manifests."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..augment import NO_AUGMENTATION, AugmentationPolicy, apply_augmentation
from ..core.manifest import DatasetManifest, Sample
from ..core.rng import derive_stream, permutation
from .layers import ModelConfig
from .network import Model, backward, cross_entropy, forward, init_model, predict, sgd_step

log = logging.getLogger(__name__)


class EmptySplit(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 0.002
    momentum: float = 0.9
    seed: int = 0
    # learning rate decays linearly to this fraction of its start over the run
    final_lr_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 <= self.final_lr_fraction <= 1:
            raise ValueError("final_lr_fraction must lie in [0, 1]")

    def lr_at(self, epoch: int) -> float:
        if self.epochs == 1:
            return self.learning_rate
        t = epoch / (self.epochs - 1)
        return self.learning_rate * (1.0 - (1.0 - self.final_lr_fraction) * t)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrainHistory:
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_acc)

    def rows(self):
        for i, row in enumerate(zip(self.train_acc, self.val_acc, self.train_loss)):
            yield (i + 1, *row)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_csv(self, path: str | os.PathLike) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_acc", "val_acc", "train_loss"])
            for epoch, tr, va, loss in self.rows():
                writer.writerow([epoch, repr(tr), repr(va), repr(loss)])


def _loaded(manifest: DatasetManifest, split: str) -> list[Sample]:
    records = manifest.split(split)
    if not records:
        raise EmptySplit(f"split {split!r} is empty")
    return [r if r.image is not None else Sample(r.id, r.path, r.label, r.split, manifest.load(r))
            for r in records]


def _labels(records) -> np.ndarray:
    return np.array([r.label.index for r in records], dtype=np.intp)


def _images(records, policy: AugmentationPolicy, seed: int, epoch: int) -> np.ndarray:
    return np.stack([apply_augmentation(r, policy, seed, epoch).data for r in records])


def train(config: ModelConfig, data: DatasetManifest, tc: TrainConfig,
          train_policy: AugmentationPolicy = NO_AUGMENTATION, model: Model | None = None):
    """Train a fresh model (or continue ``model``) and return it with its history.

    Each epoch shuffles the train split, re-draws augmentation factors with the
    epoch index in the stream key, and runs momentum SGD. Validation accuracy is
    measured on the clean validation split and used for monitoring only.
    """
    train_set = _loaded(data, "train")
    val_set = _loaded(data, "validation")
    y_val = _labels(val_set)
    x_val = _images(val_set, NO_AUGMENTATION, tc.seed, 0)
    if model is None:
        model = init_model(config, tc.seed)
    history = TrainHistory()
    for epoch in range(tc.epochs):
        order, _ = permutation(derive_stream(tc.seed, "train", epoch, "shuffle"), len(train_set))
        correct = 0
        loss_sum = 0.0
        lr = tc.lr_at(epoch)
        for b, start in enumerate(range(0, len(order), tc.batch_size)):
            batch = [train_set[k] for k in order[start:start + tc.batch_size]]
            x = _images(batch, train_policy, tc.seed, epoch)
            y = _labels(batch)
            probs, cache = forward(model, x, "train", derive_stream(tc.seed, f"batch-{b}", epoch, "dropout"))
            loss_sum += cross_entropy(probs, y) * len(batch)
            correct += int(np.sum(np.argmax(probs, axis=1) == y))
            sgd_step(model, backward(model, probs, cache, y), lr, tc.momentum)
        history.train_acc.append(correct / len(train_set))
        history.train_loss.append(loss_sum / len(train_set))
        history.val_acc.append(float(np.mean(predict(model, x_val) == y_val)))
        log.debug("epoch %d: loss %.4f train %.3f val %.3f", epoch + 1, history.train_loss[-1],
                  history.train_acc[-1], history.val_acc[-1])
    return model, history


def evaluate(model: Model, manifest: DatasetManifest, split: str,
             test_policy: AugmentationPolicy | None = None, seed: int = 0) -> float:
    """Argmax accuracy on ``split``; ``test_policy`` is applied with epoch 0."""
    records = _loaded(manifest, split)
    x = _images(records, test_policy or NO_AUGMENTATION, seed, 0)
    return float(np.mean(predict(model, x) == _labels(records)))
