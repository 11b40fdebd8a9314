"""Vectorized batch training with an exactness contract against the
per-sample recurrences.

The mean update folds a whole batch per class in one step.  For class ``i``
with prior count ``c_i``, batch occurrence count ``s_i``, and row sum ``S_i``:

    C_i  <- c_i + s_i
    mu_i <- mu_i + (S_i - s_i * mu_i) / C_i

which is algebraically identical to applying the per-sample mean recurrence
``s_i`` times (in any order), so batched and sequential training agree up to
float reordering error.  Work per batch is O(m*d + u*d) where ``u`` is the
number of distinct labels in the batch; it does not scale with the total
class count.

Covariance batching has two selectable semantics:

* ``EXACT`` replays the per-sample covariance/mean recurrences in batch
  arrival order, bit-identically to a loop of single-sample updates.
* ``CHUNK`` centers every row against the *pre-batch* class means, folds all
  rank-one contributions in one pass with the same per-position step weights
  the sequential recurrence would use, applies
  ``sigma <- (t * sigma + acc) / (t + m)``, and then applies the batched mean
  update.  Single-sample batches collapse to the exact path.

CHUNK is the fast path used by benches; EXACT backs correctness suites.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .core import (
    CovarianceFixed,
    CovarianceMode,
    DimensionMismatch,
    LabeledBatch,
    LabelOutOfRange,
    LdaModel,
    require_finite_matrix,
    require_labels,
)
from .slda import _apply_sample


class UpdateSemantics(str, enum.Enum):
    EXACT = "exact"
    CHUNK = "chunk"


def unique_counts(labels: np.ndarray, num_classes: int | None = None) -> dict[int, int]:
    """Histogram of the labels in one batch, as a label -> count mapping."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return {}
    if labels.min() < 0:
        raise LabelOutOfRange(f"negative label {labels.min()}")
    if num_classes is not None:
        require_labels(labels, num_classes)
    uniq, counts = np.unique(labels, return_counts=True)
    return {int(label): int(count) for label, count in zip(uniq, counts)}


def _validated(model: LdaModel, batch: LabeledBatch) -> tuple[np.ndarray, np.ndarray]:
    x = require_finite_matrix(batch.embeddings)
    if x.shape[1] != model.dim:
        raise DimensionMismatch(f"batch dim {x.shape[1]} != model dim {model.dim}")
    y = require_labels(batch.labels, model.num_classes)
    return x, y


def batch_update_means(model: LdaModel, batch: LabeledBatch) -> LdaModel:
    """Fold a batch into the class means and counts, in place.

    Classes absent from the batch are untouched; the per-class updates are
    independent.  A no-op when the train mode does not train means.
    """
    x, y = _validated(model, batch)
    if len(batch) == 0 or not model.train_mode.trains_mean:
        return model

    uniq, inverse, batch_counts = np.unique(y, return_inverse=True, return_counts=True)
    sums = np.zeros((uniq.shape[0], model.dim), dtype=np.float64)
    np.add.at(sums, inverse, x)

    prior = model.stats.counts[uniq]
    updated = prior + batch_counts
    mu = model.stats.means[uniq]
    model.stats.means[uniq] = mu + (sums - batch_counts[:, None] * mu) / updated[:, None]
    model.stats.counts[uniq] = updated
    return model


def batch_update_covariance(
    model: LdaModel,
    batch: LabeledBatch,
    semantics: UpdateSemantics = UpdateSemantics.EXACT,
) -> LdaModel:
    """Fold a batch into the shared covariance (and means), in place.

    Requires a plastic covariance.  EXACT semantics interleaves mean updates
    sample by sample exactly as streaming would; CHUNK applies the covariance
    in one pass against pre-batch means, then the batched mean update.
    """
    if model.covariance.mode is not CovarianceMode.PLASTIC:
        raise CovarianceFixed("covariance mode is fixed; only mean updates are allowed")
    x, y = _validated(model, batch)
    semantics = UpdateSemantics(semantics)

    m = len(batch)
    if m == 0:
        return model
    if semantics is UpdateSemantics.EXACT or m == 1:
        for i in range(m):
            _apply_sample(model, x[i], int(y[i]))
        return model

    cov = model.covariance
    if model.train_mode.trains_covariance:
        t = float(cov.step)
        centered = x - model.stats.means[y]
        steps = t + np.arange(m, dtype=np.float64)
        weights = steps / (steps + 1.0)
        acc = (centered * weights[:, None]).T @ centered
        cov.sigma = (t * cov.sigma + acc) / (t + m)
        cov.step += m
        cov.symmetrize()

    return batch_update_means(model, batch)


@dataclass
class IngestReport:
    """Wall-clock accounting for one streaming ingestion pass."""

    batch_seconds: list[float] = field(default_factory=list)
    num_samples: int = 0

    @property
    def num_batches(self) -> int:
        return len(self.batch_seconds)

    @property
    def total_seconds(self) -> float:
        return float(sum(self.batch_seconds))

    @property
    def mean_batch_seconds(self) -> float:
        return self.total_seconds / self.num_batches if self.batch_seconds else 0.0


def ingest_stream(
    model: LdaModel,
    batches: Iterable[LabeledBatch],
    semantics: UpdateSemantics = UpdateSemantics.CHUNK,
) -> tuple[LdaModel, IngestReport]:
    """Fold a stream of batches into the model, timing each batch.

    Dispatches to the covariance path when the model trains a plastic
    covariance, and to the means-only path otherwise, so a fixed-covariance
    model can ingest the same stream without error.
    """
    report = IngestReport()
    wants_covariance = (
        model.covariance.mode is CovarianceMode.PLASTIC
        and model.train_mode.trains_covariance
    )
    for batch in batches:
        start = time.perf_counter()
        if wants_covariance:
            batch_update_covariance(model, batch, semantics)
        else:
            batch_update_means(model, batch)
        report.batch_seconds.append(time.perf_counter() - start)
        report.num_samples += len(batch)
    return model, report
