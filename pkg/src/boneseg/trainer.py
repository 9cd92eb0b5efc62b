"""Supervised training with Adam and a step-decayed learning rate."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .augment import random_flip
from .errors import TrainingError
from .network import (
    ModelState,
    ProbabilityVolume,
    check_input_dims,
    compute_logits,
    forward,
    volume_tensor,
)
from .volume import LabelVolume, ScalarVolume

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 1
    lr0: float = 1e-3
    lr_decay: float = 0.95
    decay_every: int = 10
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    flip_prob: float = 0.0
    flip_axes: tuple[bool, bool, bool] = (True, False, False)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size != 1:
            raise ValueError("only batch_size = 1 is supported")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be >= 1, got {self.decay_every}")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    """``lr0 * lr_decay ** floor(epoch / decay_every)``."""
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.decay_every)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    mean_loss: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.mean_loss for r in self.records]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "lr", "mean_loss"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.lr), repr(r.mean_loss)])
        return path

    @classmethod
    def from_csv(cls, path) -> "TrainLog":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), float(r["lr"]), float(r["mean_loss"])) for r in rows])


def _pairs(dataset: Iterable) -> list[tuple[ScalarVolume, LabelVolume]]:
    out = []
    for item in dataset:
        if hasattr(item, "image") and hasattr(item, "label"):
            out.append((item.image, item.label))
        else:
            image, label = item
            out.append((image, label))
    return out


def train(
    model: ModelState,
    dataset: Sequence,
    cfg: TrainConfig,
    *,
    epochs: int | None = None,
    callback: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelState, TrainLog]:
    """Train a copy of ``model`` on ``(image, label)`` pairs.

    One gradient step per sample (batch size 1), samples reshuffled every
    epoch from ``cfg.seed``. The per-step loss is the voxel-summed cross
    entropy divided by the voxel count. ``epochs`` overrides ``cfg.epochs``
    and may be 0, in which case the returned weights equal the input ones.
    """
    pairs = _pairs(dataset)
    if not pairs:
        raise TrainingError("training dataset is empty")
    geom = pairs[0][0].geometry
    for image, label in pairs:
        if image.geometry != geom or label.geometry != geom:
            raise TrainingError("all training images and labels must share one geometry")
    check_input_dims(model.config, geom)
    n_epochs = cfg.epochs if epochs is None else int(epochs)

    state = model.clone()
    net = state.net
    dtype = next(net.parameters()).dtype
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr0, betas=cfg.betas, eps=cfg.adam_eps)
    if state.optimizer_state is not None:
        opt.load_state_dict(state.optimizer_state)
    rng = np.random.default_rng(cfg.seed)
    history = TrainLog()
    for epoch in range(n_epochs):
        lr = learning_rate(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        order = rng.permutation(len(pairs))
        total = 0.0
        for idx in order:
            image, label = pairs[idx]
            if cfg.flip_prob > 0:
                image, label = random_flip(
                    (image, label), cfg.flip_axes, seed=int(rng.integers(2**63)), prob=cfg.flip_prob
                )
            x = volume_tensor(image, dtype)
            y = torch.from_numpy(label.data.astype(np.int64))[None]
            opt.zero_grad(set_to_none=True)
            logits = compute_logits(state, x, "train")
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += loss.item()
        rec = EpochRecord(epoch, lr, total / len(pairs))
        history.records.append(rec)
        log.debug("epoch %d lr %.6g loss %.6f", epoch, lr, rec.mean_loss)
        if callback is not None:
            callback(rec)
    net.eval()
    if n_epochs > 0:
        state.optimizer_state = _detach_state(opt.state_dict())
    return state, history


def _detach_state(sd):
    if isinstance(sd, torch.Tensor):
        return sd.detach().clone()
    if isinstance(sd, dict):
        return {k: _detach_state(v) for k, v in sd.items()}
    if isinstance(sd, list):
        return [_detach_state(v) for v in sd]
    return sd


def predict(model: ModelState, vol: ScalarVolume) -> ProbabilityVolume:
    """Eval-mode forward pass."""
    return forward(model, vol, "eval")
