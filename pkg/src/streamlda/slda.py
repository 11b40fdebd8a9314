"""Per-sample streaming training and exact inference.

Training maintains one running mean per class plus a single covariance shared
across classes.  On each labeled sample the class mean moves by the standard
running-mean recurrence; when the covariance is plastic it absorbs a rank-one
contribution built from the residual against the *pre-update* class mean:

    delta = step * (z - mu_y) (z - mu_y)^T / (step + 1)
    sigma <- (step * sigma + delta) / (step + 1)

The covariance update runs before the mean update so the residual is taken
against the mean as it stood when the sample arrived.  This ordering is the
package-wide canon: the batched trainer's exactness contract replays it.

Inference translates (means, covariance) into an equivalent linear head

    lam = ((1 - beta) * sigma + beta * I)^-1
    w_k = lam @ mu_k
    b_k = -0.5 * mu_k . (lam @ mu_k)

and scores queries as ``W @ x + b``.  The translation costs O(d^3), so it is
an explicit cached artifact with a staleness marker rather than something
recomputed per query.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .core import (
    ClassStats,
    CovarianceMode,
    DimensionMismatch,
    InvalidDimension,
    LabelOutOfRange,
    LdaModel,
    LinearHead,
    SharedCovariance,
    ShrinkagePrecision,
    TrainMode,
    require_embedding,
    spd_solve,
)

DEFAULT_BETA = 1e-4


@numba.njit(fastmath=True)
def _dot_rows(matrix, x, rows, out):  # pragma: no cover - jitted
    for i in range(rows.shape[0]):
        r = rows[i]
        acc = 0.0
        for j in range(x.shape[0]):
            acc += matrix[r, j] * x[j]
        out[i] = acc


def score_rows(matrix: np.ndarray, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Dot products of selected matrix rows with ``x``, without gathering.

    One fused pass per row keeps shortlisted scoring at streaming bandwidth
    instead of paying numpy's per-row gather.  Both the exact and the
    shortlisted inference paths score rows through this same kernel, so a
    row's score is bitwise identical no matter which path computes it.
    """
    out = np.empty(rows.shape[0], dtype=np.float64)
    _dot_rows(matrix, x, rows, out)
    return out


def score_all(matrix: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``score_rows`` over every row of the matrix."""
    return score_rows(matrix, x, np.arange(matrix.shape[0], dtype=np.int64))


@dataclass
class TranslatedModel:
    """A linear head derived from an LDA model, with provenance for staleness.

    Rows of dead classes (count zero) carry a -inf bias so their logits can
    never win an argmax.  ``source_marker`` records the
    (covariance step, total count) of the model at translation time.
    """

    head: LinearHead
    source_step: int
    beta: float
    source_marker: tuple[int, int]
    live_mask: np.ndarray

    @property
    def dim(self) -> int:
        return self.head.dim

    @property
    def num_classes(self) -> int:
        return self.head.num_classes

    def is_stale(self, model: LdaModel) -> bool:
        """True once the model's means or covariance moved past this head."""
        return self.source_marker != model.snapshot_marker()


def init_empty(
    dim: int,
    num_classes: int,
    mode: CovarianceMode = CovarianceMode.PLASTIC,
    train_mode: TrainMode = TrainMode.TRAIN_BOTH,
) -> LdaModel:
    """Create a model with all means, counts, and the covariance at zero."""
    if dim <= 0 or num_classes <= 0:
        raise InvalidDimension(f"dim and num_classes must be positive, got ({dim}, {num_classes})")
    return LdaModel(
        stats=ClassStats.zeros(num_classes, dim),
        covariance=SharedCovariance.zeros(dim, mode),
        dim=dim,
        num_classes=num_classes,
        train_mode=train_mode,
    )


def update_sample(model: LdaModel, z: np.ndarray, y: int) -> LdaModel:
    """Fold one labeled sample into the model, in place.

    Components not enabled by ``model.train_mode`` (or a fixed covariance)
    are left bit-identical.  Returns the mutated model for chaining.
    """
    if not 0 <= y < model.num_classes:
        raise LabelOutOfRange(f"label {y} outside [0, {model.num_classes})")
    z = require_embedding(z, model.dim)
    return _apply_sample(model, z, y)


def _apply_sample(model: LdaModel, z: np.ndarray, y: int) -> LdaModel:
    # Pre-validated inner kernel; the batched trainer replays it verbatim for
    # its exactness contract.  Covariance first, so the residual is taken
    # against the pre-update class mean.
    mean = model.stats.means[y]

    cov = model.covariance
    if cov.mode is CovarianceMode.PLASTIC and model.train_mode.trains_covariance:
        t = float(cov.step)
        resid = z - mean
        delta = np.outer(resid, resid) * (t / (t + 1.0))
        cov.sigma = (t * cov.sigma + delta) / (t + 1.0)
        cov.step += 1
        cov.symmetrize()

    if model.train_mode.trains_mean:
        c = float(model.stats.counts[y])
        model.stats.means[y] = (c * mean + z) / (c + 1.0)
        model.stats.counts[y] += 1

    return model


def shrinkage_precision(model: LdaModel, beta: float = DEFAULT_BETA) -> ShrinkagePrecision:
    """Compute ((1-beta)*Sigma + beta*I)^-1 via the SPD solve."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    d = model.dim
    shrunk = (1.0 - beta) * model.covariance.sigma + beta * np.eye(d)
    lam = spd_solve(shrunk, np.eye(d))
    lam = (lam + lam.T) * 0.5
    return ShrinkagePrecision(lam=lam, beta=beta)


def translate(model: LdaModel, beta: float = DEFAULT_BETA) -> TranslatedModel:
    """Translate the model into an equivalent linear head.

    The covariance is mixed with ``beta * I`` before inversion, so the
    translation succeeds even for a fresh model with a zero covariance (where
    it degenerates to a scaled nearest-mean classifier).
    """
    precision = shrinkage_precision(model, beta)
    means = model.stats.means
    weights = means @ precision.lam
    bias = -0.5 * np.einsum("ij,ij->i", means, weights)

    live = model.stats.live_mask.copy()
    bias[~live] = -np.inf

    return TranslatedModel(
        head=LinearHead(weights=weights, bias=bias),
        source_step=model.covariance.step,
        beta=beta,
        source_marker=model.snapshot_marker(),
        live_mask=live,
    )


def predict_exact(head: TranslatedModel, x: np.ndarray) -> tuple[np.ndarray, int]:
    """Logits over all classes plus the argmax class for one query.

    Dead classes score -inf; ties break toward the lowest class id.
    """
    x = require_embedding(x, head.dim)
    logits = score_all(head.head.weights, x)
    logits += head.head.bias
    return logits, int(np.argmax(logits))


def logits_many(head: TranslatedModel, xs: np.ndarray) -> np.ndarray:
    """Vectorized exact logits for an (m, d) query matrix."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != head.dim:
        raise DimensionMismatch(f"expected (m, {head.dim}) queries, got shape {xs.shape}")
    return xs @ head.head.weights.T + head.head.bias


def predict_many(head: TranslatedModel, xs: np.ndarray) -> np.ndarray:
    """Argmax class per row of an (m, d) query matrix."""
    return np.argmax(logits_many(head, xs), axis=1)
