"""Reference fully-connected classifier head, trained the conventional way.

A multinomial-logistic (softmax) linear head fit by mini-batch gradient
descent with a cosine-decayed step size.  This is the baseline the training
benches race against: it sees the same precomputed embeddings the streaming
model ingests, so all timings compare classifier work only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import LabeledBatch, LinearHead, NonFiniteLoss, require_labels


@dataclass(frozen=True)
class FcTrainConfig:
    epochs: int = 1
    batch_size: int = 512
    learning_rate: float = 0.5
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    loss: float
    seconds: float
    val_accuracy: float | None = None


@dataclass
class FcTrainResult:
    head: LinearHead
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return float(sum(e.seconds for e in self.epochs))

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].loss if self.epochs else math.nan


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def head_accuracy(head: LinearHead, batch: LabeledBatch, chunk_rows: int = 4096) -> float:
    """Top-1 accuracy of a linear head on a labeled batch."""
    if len(batch) == 0:
        return 0.0
    x = np.asarray(batch.embeddings, dtype=np.float64)
    hits = 0
    for start in range(0, len(batch), chunk_rows):
        block = x[start : start + chunk_rows]
        pred = np.argmax(block @ head.weights.T + head.bias, axis=1)
        hits += int(np.sum(pred == batch.labels[start : start + chunk_rows]))
    return hits / len(batch)


def _run_epoch(
    head: LinearHead,
    x: np.ndarray,
    y: np.ndarray,
    batch_size: int,
    base_lr: float,
    order: np.ndarray,
    step_offset: int,
    total_steps: int,
) -> tuple[float, float]:
    """One pass over ``order``; mutates the head. Returns (mean loss, seconds)."""
    weights, bias = head.weights, head.bias
    start_time = time.perf_counter()
    loss_sum = 0.0
    step = step_offset
    m = order.shape[0]
    for lo in range(0, m, batch_size):
        idx = order[lo : lo + batch_size]
        xb, yb = x[idx], y[idx]
        probs = _softmax_rows(xb @ weights.T + bias)
        with np.errstate(divide="ignore"):
            batch_loss = -np.mean(np.log(probs[np.arange(len(idx)), yb]))
        if not np.isfinite(batch_loss):
            raise NonFiniteLoss(f"loss diverged at step {step}")
        loss_sum += batch_loss * len(idx)

        grad = probs
        grad[np.arange(len(idx)), yb] -= 1.0
        grad /= len(idx)
        lr = base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
        weights -= lr * (grad.T @ xb)
        bias -= lr * grad.sum(axis=0)
        step += 1
    return loss_sum / m, time.perf_counter() - start_time


def train_fc_head(
    train: LabeledBatch,
    num_classes: int,
    config: FcTrainConfig = FcTrainConfig(),
    val: LabeledBatch | None = None,
) -> FcTrainResult:
    """Fit a softmax-regression head over the embeddings.

    The step size follows a cosine decay from ``learning_rate`` toward zero
    over all scheduled steps.  Raises :class:`NonFiniteLoss` if the loss
    diverges, which signals a step size too large for the data scale.
    """
    x = np.asarray(train.embeddings, dtype=np.float64)
    y = require_labels(train.labels, num_classes)
    m, dim = x.shape
    rng = np.random.default_rng(config.seed)

    head = LinearHead(weights=np.zeros((num_classes, dim)), bias=np.zeros(num_classes))
    result = FcTrainResult(head=head)
    if m == 0 or config.epochs == 0:
        return result

    steps_per_epoch = max(1, math.ceil(m / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    for epoch in range(config.epochs):
        loss, seconds = _run_epoch(
            head,
            x,
            y,
            config.batch_size,
            config.learning_rate,
            rng.permutation(m),
            epoch * steps_per_epoch,
            total_steps,
        )
        stats = EpochStats(epoch=epoch, loss=loss, seconds=seconds)
        if val is not None:
            stats.val_accuracy = head_accuracy(head, val)
        result.epochs.append(stats)
    return result


@dataclass
class ConvergenceResult:
    result: FcTrainResult
    epochs_to_converge: int
    plateau_accuracy: float
    seconds_to_converge: float


def train_until_converged(
    train: LabeledBatch,
    num_classes: int,
    val: LabeledBatch,
    config: FcTrainConfig = FcTrainConfig(),
    tolerance: float = 0.01,
    window: int = 5,
    max_epochs: int = 50,
) -> ConvergenceResult:
    """Train epoch by epoch until the validation accuracy plateaus.

    Stops once no epoch in a trailing ``window`` improved the best validation
    accuracy (or at ``max_epochs``), then reports the first epoch whose
    accuracy came within ``tolerance`` of that plateau.  Because the horizon
    is unknown, each epoch runs one full cosine cycle (warm restarts) instead
    of decaying across a guessed total.
    """
    x = np.asarray(train.embeddings, dtype=np.float64)
    y = require_labels(train.labels, num_classes)
    m, dim = x.shape
    rng = np.random.default_rng(config.seed)

    head = LinearHead(weights=np.zeros((num_classes, dim)), bias=np.zeros(num_classes))
    result = FcTrainResult(head=head)
    steps_per_epoch = max(1, math.ceil(m / config.batch_size))
    accuracies: list[float] = []
    best = -1.0
    since_best = 0
    for epoch in range(max_epochs):
        loss, seconds = _run_epoch(
            head, x, y, config.batch_size, config.learning_rate,
            rng.permutation(m), 0, steps_per_epoch,
        )
        accuracy = head_accuracy(head, val)
        result.epochs.append(EpochStats(epoch=epoch, loss=loss, seconds=seconds, val_accuracy=accuracy))
        accuracies.append(accuracy)
        if accuracy > best:
            best = accuracy
            since_best = 0
        else:
            since_best += 1
        if since_best >= window:
            break

    plateau = max(accuracies)
    epochs_to_converge = next(i + 1 for i, acc in enumerate(accuracies) if acc >= plateau - tolerance)
    seconds = float(sum(e.seconds for e in result.epochs[:epochs_to_converge]))
    return ConvergenceResult(
        result=result,
        epochs_to_converge=epochs_to_converge,
        plateau_accuracy=plateau,
        seconds_to_converge=seconds,
    )
