"""Shared domain types, error taxonomy, and the SPD solve used for precision.

Conventions used throughout the package:

* Embeddings are 1-D float arrays of length ``d``; batches are ``(m, d)``
  row-major matrices with an ``(m,)`` integer label vector.
* Means and the shared covariance are stored and accumulated in float64.
  File payloads are float32 and get widened on ingestion, because streaming
  recurrences over millions of samples lose precision in 32-bit.
* The covariance is re-symmetrized after every update so that floating-point
  drift never breaks the SPD factorization.
* A class with count zero is "dead": its mean row is all zeros, it is
  excluded from nearest-mean indexing, and it receives a -inf logit during
  exact inference so it can never win a prediction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


# ---------------------------------------------------------------------------
# Errors.
#
# DataError maps to CLI exit code 2, NumericalError to exit code 3.
# ---------------------------------------------------------------------------


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class DataError(EngineError):
    """Invalid inputs, shapes, labels, or file contents."""


class NumericalError(EngineError):
    """Numerical failure (factorization breakdown, diverging loss)."""


class InvalidDimension(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class CovarianceFixed(DataError):
    pass


class TooFewClasses(DataError):
    pass


class InvalidSpec(DataError):
    pass


class NoLiveClasses(DataError):
    pass


class StaleIndex(DataError):
    pass


class BadMagic(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass


# ---------------------------------------------------------------------------
# Modes.
# ---------------------------------------------------------------------------


class CovarianceMode(str, enum.Enum):
    """Whether the shared covariance keeps updating during streaming."""

    PLASTIC = "plastic"
    FIXED = "fixed"


class TrainMode(str, enum.Enum):
    """Which model components streaming updates are allowed to touch."""

    TRAIN_BOTH = "train_both"
    TRAIN_MU_ONLY = "train_mu_only"
    TRAIN_SIGMA_ONLY = "train_sigma_only"
    FROZEN = "frozen"

    @property
    def trains_mean(self) -> bool:
        return self in (TrainMode.TRAIN_BOTH, TrainMode.TRAIN_MU_ONLY)

    @property
    def trains_covariance(self) -> bool:
        return self in (TrainMode.TRAIN_BOTH, TrainMode.TRAIN_SIGMA_ONLY)


# ---------------------------------------------------------------------------
# Domain types.
# ---------------------------------------------------------------------------


@dataclass
class LabeledBatch:
    """A batch of ``m`` embeddings with their integer class labels.

    ``embeddings`` is ``(m, d)`` and ``labels`` is ``(m,)``; ``m`` may be
    zero.  This is the unit of streaming ingestion.
    """

    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings))
        self.labels = np.asarray(self.labels)
        if self.embeddings.size == 0:
            self.embeddings = self.embeddings.reshape(0, self.embeddings.shape[-1] if self.embeddings.ndim == 2 else 0)
        if self.labels.ndim != 1:
            raise DimensionMismatch(f"labels must be 1-D, got shape {self.labels.shape}")
        if self.embeddings.shape[0] != self.labels.shape[0]:
            raise DimensionMismatch(
                f"batch has {self.embeddings.shape[0]} embedding rows "
                f"but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class ClassStats:
    """Per-class running means (n, d) and sample counts (n,)."""

    means: np.ndarray
    counts: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int, dim: int) -> "ClassStats":
        return cls(
            means=np.zeros((num_classes, dim), dtype=np.float64),
            counts=np.zeros(num_classes, dtype=np.int64),
        )

    @property
    def live_mask(self) -> np.ndarray:
        return self.counts > 0

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())


@dataclass
class SharedCovariance:
    """Shared d x d covariance with its global step counter and mode.

    ``step`` counts how many samples the covariance recurrence has absorbed.
    """

    sigma: np.ndarray
    step: int
    mode: CovarianceMode

    @classmethod
    def zeros(cls, dim: int, mode: CovarianceMode = CovarianceMode.PLASTIC) -> "SharedCovariance":
        return cls(sigma=np.zeros((dim, dim), dtype=np.float64), step=0, mode=mode)

    def symmetrize(self) -> None:
        # Drift from repeated scaled updates breaks the Cholesky factorization
        # long before it is visible in the entries.
        self.sigma = (self.sigma + self.sigma.T) * 0.5


@dataclass
class LinearHead:
    """Fully-connected classification head: weights (n, d) plus bias (n,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionMismatch(
                f"head has {self.weights.shape[0]} weight rows but {self.bias.shape[0]} biases"
            )

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class ShrinkagePrecision:
    """Regularized inverse covariance ((1-beta)*Sigma + beta*I)^-1."""

    lam: np.ndarray
    beta: float


@dataclass
class LdaModel:
    """The streaming LDA classifier state: class stats plus shared covariance.

    ``train_mode`` gates which components streaming updates may modify; the
    covariance additionally honours its own plastic/fixed mode.
    """

    stats: ClassStats
    covariance: SharedCovariance
    dim: int
    num_classes: int
    train_mode: TrainMode = TrainMode.TRAIN_BOTH

    def snapshot_marker(self) -> tuple[int, int]:
        """(covariance step, total sample count) identifying this state.

        Means only move when a count moves, so the pair pins down both the
        covariance and the mean matrix for staleness checks.
        """
        return (self.covariance.step, self.stats.total_count)


# ---------------------------------------------------------------------------
# Validation helpers.
# ---------------------------------------------------------------------------


def require_embedding(x: np.ndarray, dim: int) -> np.ndarray:
    """Validate a query/sample vector and widen it to float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != dim:
        raise DimensionMismatch(f"expected embedding of length {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("embedding contains NaN or Inf")
    return x


def require_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise LabelOutOfRange(f"label {bad} outside [0, {num_classes})")
    return labels.astype(np.int64, copy=False)


def require_finite_matrix(x: np.ndarray, what: str = "embeddings") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput(f"{what} contain NaN or Inf")
    return x


# ---------------------------------------------------------------------------
# SPD solve.
# ---------------------------------------------------------------------------


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive-definite ``a``.

    Uses a Cholesky factorization followed by triangular solves; an explicit
    inverse of an unregularized matrix is never formed.  Raises
    :class:`NotPositiveDefinite` when the factorization fails, which during
    translation signals a shrinkage coefficient too small for the current
    covariance (or a corrupted covariance).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got shape {a.shape}")
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"a has {a.shape[0]} rows but b has {b.shape[0]}")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from exc
    return scipy.linalg.cho_solve(factor, b, check_finite=False)
