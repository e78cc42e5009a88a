"""Adam training loop over the synthetic corpus, with per-epoch loss curve."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tape, Tensor, backward
from ..model import ReportModel
from .config import TrainConfig
from .data import SampleRecord, build_tokenizer, split_records
from .rng import substream


class Adam:
    """Standard Adam with bias correction; no weight decay, no schedule."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grad_scale: float = 1.0) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * grad_scale
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - p.data.dtype.type(self.lr) * update.astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class TrainResult:
    model: ReportModel
    loss_curve: list[dict] = field(default_factory=list)
    final_train_loss: float = math.nan
    initial_train_loss: float = math.nan


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


def _mean_loss(model: ReportModel, records: list[SampleRecord]) -> float:
    total = 0.0
    for rec in records:
        total += model.loss(rec.patches, rec.report).item()
    return total / len(records)


def train(cfg: TrainConfig, records: list[SampleRecord],
          model: ReportModel | None = None,
          log=None) -> TrainResult:
    """Minimize the report loss over shuffled mini-batches.

    Deterministic for a fixed config seed: init, shuffling, and the data
    are all tied to named substreams.
    """
    if not records:
        raise ValueError("train: dataset is empty")
    if model is None:
        model = ReportModel(cfg, build_tokenizer())
    train_split = split_records(records, "train")
    val_split = [r for r in records if r.split == "val"]

    optimizer = Adam(model.parameters(), cfg.learning_rate,
                     cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    result = TrainResult(model=model)

    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, f"shuffle:{epoch}").permutation(len(train_split))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_split[i] for i in order[start:start + cfg.batch_size]]
            optimizer.zero_grad()
            batch_loss = 0.0
            for rec in batch:
                with Tape():
                    loss = model.loss(rec.patches, rec.report)
                    backward(loss)
                batch_loss += loss.item()
            batch_loss /= len(batch)
            if not math.isfinite(batch_loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: {batch_loss}")
            optimizer.step(grad_scale=1.0 / len(batch))
            epoch_loss += batch_loss
            n_batches += 1
        train_loss = epoch_loss / max(n_batches, 1)
        entry = {"epoch": epoch, "train_loss": train_loss}
        if val_split:
            entry["val_loss"] = _mean_loss(model, val_split)
        result.loss_curve.append(entry)
        if math.isnan(result.initial_train_loss):
            result.initial_train_loss = train_loss
        result.final_train_loss = train_loss
        if log:
            log(entry)
    return result
