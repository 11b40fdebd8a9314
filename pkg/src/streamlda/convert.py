"""Conversion between fully-connected heads and LDA models.

A trained linear head can seed an LDA model directly: the weight rows become
the class means, and the covariance starts as either the identity (suited to
decorrelated embedding dimensions, i.e. few well-separated classes) or the
sample covariance of the weight rows (suited to extreme label spaces where
inter-class confusion correlates the embedding dimensions).  The FC bias is
dropped; translation regenerates an LDA-consistent bias from the means.

The module also carries the univariate two-class posterior identity that
justifies the conversion: with Gaussian class likelihoods sharing one
variance, the exact Bayes posterior is a logistic curve in x, so a
fully-connected layer and an LDA classifier parameterize the same family.
Both evaluation routes are exposed so one can serve as the oracle for the
other.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ClassStats,
    CovarianceMode,
    InvalidSpec,
    LdaModel,
    LinearHead,
    NonFiniteInput,
    SharedCovariance,
    TooFewClasses,
    TrainMode,
)
from .slda import DEFAULT_BETA, translate


class SigmaInit(str, enum.Enum):
    """Covariance seeding choices for FC-to-LDA conversion."""

    IDENTITY = "identity"
    COV_OF_WEIGHTS = "cov"


def fc_to_lda(
    head: LinearHead,
    sigma_mode: SigmaInit = SigmaInit.IDENTITY,
    covariance_mode: CovarianceMode = CovarianceMode.PLASTIC,
    train_mode: TrainMode = TrainMode.TRAIN_BOTH,
) -> LdaModel:
    """Seed an LDA model from a linear head's weights.

    Means copy the weight rows; every class gets count 1 so converted classes
    are live for inference and later streaming updates blend in at the
    slowest legal rate.  The covariance step starts at the class count, and
    the head bias is discarded.
    """
    sigma_mode = SigmaInit(sigma_mode)
    weights = np.asarray(head.weights, dtype=np.float64)
    bias = np.asarray(head.bias, dtype=np.float64)
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
        raise NonFiniteInput("head weights and bias must be finite")
    n, d = weights.shape

    if sigma_mode is SigmaInit.COV_OF_WEIGHTS:
        if n < 2:
            raise TooFewClasses(f"weight covariance needs >= 2 classes, got {n}")
        # Each class weight vector is one observation; divisor n - 1.
        sigma = np.atleast_2d(np.cov(weights, rowvar=False))
    else:
        sigma = np.eye(d)

    return LdaModel(
        stats=ClassStats(means=weights.copy(), counts=np.ones(n, dtype=np.int64)),
        covariance=SharedCovariance(sigma=sigma, step=n, mode=CovarianceMode(covariance_mode)),
        dim=d,
        num_classes=n,
        train_mode=TrainMode(train_mode),
    )


def lda_to_fc(model: LdaModel, beta: float = DEFAULT_BETA) -> LinearHead:
    """The model's equivalent linear head (translation under the conversion
    vocabulary).  Zero-count classes keep their -inf exclusion bias."""
    return translate(model, beta).head


@dataclass(frozen=True)
class BinaryLdaSpec:
    """Univariate two-class Gaussian problem with shared variance."""

    mu0: float
    mu1: float
    sigma: float
    phi: float  # prior probability of class 1

    def validate(self) -> "BinaryLdaSpec":
        ok = (
            math.isfinite(self.mu0)
            and math.isfinite(self.mu1)
            and self.sigma > 0
            and 0.0 < self.phi < 1.0
        )
        if not ok:
            raise InvalidSpec(f"invalid binary spec {self}")
        return self


@dataclass(frozen=True)
class BinaryPosterior:
    """Both evaluation routes of p(y=1 | x), plus the logistic parameters."""

    bayes: float
    logistic: float
    w: float
    b: float
    alpha: float


def binary_posterior(spec: BinaryLdaSpec, x: float) -> BinaryPosterior:
    """Evaluate p(y=1 | x) by direct Bayes' rule and by its closed logistic form.

    The logistic route uses w = (mu1 - mu0) / sigma^2,
    b = (mu0^2 - mu1^2) / (2 sigma^2) and prior odds alpha = phi / (1 - phi),
    evaluated as 1 / (1 + exp(-(w*x + b + ln alpha))).  The two routes agree
    to floating-point accuracy for every valid spec, which is the identity
    that makes the FC head and the LDA classifier interchangeable.
    """
    spec.validate()
    var = spec.sigma * spec.sigma

    # Direct Bayes' rule with Gaussian likelihoods (the shared normalizer of
    # the density cancels in the ratio, so it is kept for clarity only).
    norm = 1.0 / (spec.sigma * math.sqrt(2.0 * math.pi))
    lik1 = norm * math.exp(-0.5 * (x - spec.mu1) ** 2 / var)
    lik0 = norm * math.exp(-0.5 * (x - spec.mu0) ** 2 / var)
    joint1 = spec.phi * lik1
    joint0 = (1.0 - spec.phi) * lik0
    bayes = joint1 / (joint1 + joint0)

    w = (spec.mu1 - spec.mu0) / var
    b = (spec.mu0 * spec.mu0 - spec.mu1 * spec.mu1) / (2.0 * var)
    alpha = spec.phi / (1.0 - spec.phi)
    logistic = 1.0 / (1.0 + math.exp(-(w * x + b + math.log(alpha))))

    return BinaryPosterior(bayes=bayes, logistic=logistic, w=w, b=b, alpha=alpha)
